"""MetaImage (.mhd header + raw payload) reader and writer.

Only the keys needed for LUNA16-style volumes are handled: NDims, DimSize,
ElementType, ElementSpacing, Offset, ElementDataFile. Header order of
DimSize/ElementSpacing/Offset is (x, y, z) and is permuted into the package
convention (z, y, x); the raw payload is x-fastest, which is exactly a
C-ordered (z, y, x) array.
"""

import os

import numpy as np

from ..volume import CtVolume

_ELEMENT_DTYPES = {
    "MET_CHAR": np.int8,
    "MET_UCHAR": np.uint8,
    "MET_SHORT": np.int16,
    "MET_USHORT": np.uint16,
    "MET_INT": np.int32,
    "MET_UINT": np.uint32,
    "MET_FLOAT": np.float32,
    "MET_DOUBLE": np.float64,
}

_REQUIRED_KEYS = ("NDims", "DimSize", "ElementType", "ElementSpacing", "Offset",
                  "ElementDataFile")


class MetaImageError(ValueError):
    """Malformed or unsupported MetaImage header/payload."""


def _parse_header(path):
    header = {}
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise MetaImageError(f"malformed header line: {line!r}")
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
            if key.strip() == "ElementDataFile":
                break  # payload key terminates the header by convention
    return header


def load_metaimage(path):
    """Read an .mhd/.raw pair into a CtVolume (HU voxels, (z, y, x) geometry)."""
    header = _parse_header(path)
    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise MetaImageError(f"missing header keys: {missing}")

    ndims = int(header["NDims"])
    if ndims != 3:
        raise MetaImageError(f"only NDims = 3 is supported, got {ndims}")
    dim_xyz = [int(v) for v in header["DimSize"].split()]
    spacing_xyz = [float(v) for v in header["ElementSpacing"].split()]
    offset_xyz = [float(v) for v in header["Offset"].split()]
    if not (len(dim_xyz) == len(spacing_xyz) == len(offset_xyz) == 3):
        raise MetaImageError("DimSize/ElementSpacing/Offset must each have 3 entries")

    element_type = header["ElementType"]
    if element_type not in _ELEMENT_DTYPES:
        raise MetaImageError(f"unsupported ElementType {element_type!r}")
    dtype = np.dtype(_ELEMENT_DTYPES[element_type])
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        dtype = dtype.newbyteorder(">")

    data_file = header["ElementDataFile"]
    if data_file.upper() == "LOCAL":
        raise MetaImageError("inline (LOCAL) payloads are not supported; use a .raw file")
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)), data_file)
    payload = np.fromfile(raw_path, dtype=dtype)

    expected = dim_xyz[0] * dim_xyz[1] * dim_xyz[2]
    if payload.size != expected:
        raise MetaImageError(
            f"payload length mismatch: got {payload.size} elements, header implies {expected}")

    shape_zyx = (dim_xyz[2], dim_xyz[1], dim_xyz[0])
    voxels = payload.reshape(shape_zyx).astype(np.float32)
    spacing_zyx = (spacing_xyz[2], spacing_xyz[1], spacing_xyz[0])
    offset_zyx = (offset_xyz[2], offset_xyz[1], offset_xyz[0])
    return CtVolume(voxels, spacing_zyx, offset_zyx, normalized=False)


def save_metaimage(path, voxels, spacing, origin, element_type="MET_SHORT"):
    """Write a (z, y, x) grid as an .mhd header plus little-endian .raw payload.

    `path` should end in .mhd; the payload lands next to it with a .raw suffix.
    """
    if element_type not in _ELEMENT_DTYPES:
        raise MetaImageError(f"unsupported ElementType {element_type!r}")
    if not path.endswith(".mhd"):
        raise MetaImageError(f"expected a .mhd path, got {path!r}")
    voxels = np.asarray(voxels)
    if voxels.ndim != 3:
        raise MetaImageError("only 3D grids can be written")

    dtype = np.dtype(_ELEMENT_DTYPES[element_type]).newbyteorder("<")
    raw_name = os.path.basename(path)[:-4] + ".raw"
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)), raw_name)

    nz, ny, nx = voxels.shape
    sz, sy, sx = spacing
    oz, oy, ox = origin
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        f"Offset = {ox:g} {oy:g} {oz:g}",
        f"ElementSpacing = {sx:g} {sy:g} {sz:g}",
        f"DimSize = {nx} {ny} {nz}",
        f"ElementType = {element_type}",
        f"ElementDataFile = {raw_name}",
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    if np.issubdtype(dtype.base, np.integer):
        data = np.rint(voxels).astype(dtype)
    else:
        data = voxels.astype(dtype)
    data.tofile(raw_path)
