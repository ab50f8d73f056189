"""NIfTI-1 file I/O implemented directly on the 348-byte header layout.

Only single-file NIfTI-1 volumes (.nii, optionally gzip-compressed) with
scalar datatypes are supported. On read, the scale slope/intercept are
applied and data is converted to float32; the affine comes from the sform
if set, else the qform, else a diagonal pixdim fallback. On write, the
sform carries the affine (slope=1, intercept=0) so files round-trip and
load in standard neuroimaging tools.

Gzip output is written with mtime=0 and a fixed compression level so that
identical volumes produce byte-identical files.
"""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from mrisynth.volume import VoxelGrid

HEADER_SIZE = 348

_HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"), ("data_type", "S10"), ("db_name", "S18"),
    ("extents", "i4"), ("session_error", "i2"), ("regular", "S1"), ("dim_info", "u1"),
    ("dim", "i2", 8),
    ("intent_p1", "f4"), ("intent_p2", "f4"), ("intent_p3", "f4"),
    ("intent_code", "i2"), ("datatype", "i2"), ("bitpix", "i2"), ("slice_start", "i2"),
    ("pixdim", "f4", 8), ("vox_offset", "f4"), ("scl_slope", "f4"), ("scl_inter", "f4"),
    ("slice_end", "i2"), ("slice_code", "u1"), ("xyzt_units", "u1"),
    ("cal_max", "f4"), ("cal_min", "f4"), ("slice_duration", "f4"), ("toffset", "f4"),
    ("glmax", "i4"), ("glmin", "i4"),
    ("descrip", "S80"), ("aux_file", "S24"),
    ("qform_code", "i2"), ("sform_code", "i2"),
    ("quatern_b", "f4"), ("quatern_c", "f4"), ("quatern_d", "f4"),
    ("qoffset_x", "f4"), ("qoffset_y", "f4"), ("qoffset_z", "f4"),
    ("srow_x", "f4", 4), ("srow_y", "f4", 4), ("srow_z", "f4", 4),
    ("intent_name", "S16"), ("magic", "S4"),
])
assert _HEADER_DTYPE.itemsize == HEADER_SIZE

# NIfTI-1 datatype code -> numpy dtype (scalar types only)
_DTYPES = {
    2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64,
    256: np.int8, 512: np.uint16, 768: np.uint32, 1024: np.int64, 1280: np.uint64,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

_UNITS_MM_SEC = 10  # NIFTI_UNITS_MM (2) | NIFTI_UNITS_SEC (8)


class NiftiError(ValueError):
    """Malformed, truncated, or unsupported NIfTI input."""


def _open_maybe_gzip(path: Path, mode: str):
    if mode == "rb":
        with open(path, "rb") as fh:
            magic = fh.read(2)
        if magic == b"\x1f\x8b":
            return gzip.open(path, "rb")
        return open(path, "rb")
    raise ValueError(mode)


def _qform_affine(hdr) -> np.ndarray:
    b, c, d = float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    rot = np.array([
        [a*a + b*b - c*c - d*d, 2*(b*c - a*d),       2*(b*d + a*c)],
        [2*(b*c + a*d),         a*a + c*c - b*b - d*d, 2*(c*d - a*b)],
        [2*(b*d - a*c),         2*(c*d + a*b),       a*a + d*d - b*b - c*c],
    ])
    pixdim = np.asarray(hdr["pixdim"], dtype=np.float64)
    qfac = -1.0 if pixdim[0] == -1.0 else 1.0
    scale = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * scale
    affine[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return affine


def _header_affine(hdr) -> np.ndarray:
    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0] = np.asarray(hdr["srow_x"], dtype=np.float64)
        affine[1] = np.asarray(hdr["srow_y"], dtype=np.float64)
        affine[2] = np.asarray(hdr["srow_z"], dtype=np.float64)
        return affine
    if int(hdr["qform_code"]) > 0:
        return _qform_affine(hdr)
    pixdim = np.asarray(hdr["pixdim"], dtype=np.float64)
    return np.diag([pixdim[1], pixdim[2], pixdim[3], 1.0])


def read_nifti(path) -> VoxelGrid:
    """Read a 3-D NIfTI-1 volume into a float32 VoxelGrid."""
    path = Path(path)
    if not path.exists():
        raise NiftiError(f"{path}: no such file")

    with _open_maybe_gzip(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
        if len(raw) < HEADER_SIZE:
            raise NiftiError(
                f"{path}: truncated header, got {len(raw)} of {HEADER_SIZE} bytes"
            )
        hdr = np.frombuffer(raw, dtype=_HEADER_DTYPE)[0]
        swapped = False
        if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
            hdr = np.frombuffer(raw, dtype=_HEADER_DTYPE.newbyteorder())[0]
            swapped = True
            if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
                raise NiftiError(
                    f"{path}: bad sizeof_hdr (not {HEADER_SIZE} in either byte order)"
                )

        magic = bytes(hdr["magic"])[:3]
        if magic == b"ni1":
            raise NiftiError(f"{path}: two-file NIfTI (magic 'ni1') is not supported")
        if magic != b"n+1":
            raise NiftiError(f"{path}: bad magic {magic!r}, expected 'n+1'")

        dim = np.asarray(hdr["dim"], dtype=np.int64)
        ndim = int(dim[0])
        if ndim < 3 or ndim > 7 or np.any(dim[4:ndim + 1] > 1):
            raise NiftiError(f"{path}: not a 3-D volume, dim={dim[:ndim + 1].tolist()}")
        dims = tuple(int(v) for v in dim[1:4])
        if any(v <= 0 for v in dims):
            raise NiftiError(f"{path}: nonpositive dim entries {dims}")

        code = int(hdr["datatype"])
        if code not in _DTYPES:
            raise NiftiError(f"{path}: unsupported datatype code {code}")
        dtype = np.dtype(_DTYPES[code])
        if swapped:
            dtype = dtype.newbyteorder()

        vox_offset = int(float(hdr["vox_offset"]))
        skip = vox_offset - HEADER_SIZE
        if skip < 0:
            raise NiftiError(f"{path}: vox_offset {vox_offset} overlaps the header")
        if skip:
            fh.read(skip)

        need = int(np.prod(dims)) * dtype.itemsize
        buf = fh.read(need)
        if len(buf) < need:
            raise NiftiError(
                f"{path}: truncated data, got {len(buf)} of {need} bytes"
            )

    arr = np.frombuffer(buf, dtype=dtype).reshape(dims, order="F")
    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if np.isnan(slope) or slope == 0.0:
        slope, inter = 1.0, 0.0
    if slope != 1.0 or inter != 0.0:
        data = arr.astype(np.float64) * slope + inter
    else:
        data = arr
    data = np.ascontiguousarray(data, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise NiftiError(f"{path}: volume contains non-finite values")

    affine = _header_affine(hdr)
    pixdim = np.asarray(hdr["pixdim"], dtype=np.float64)
    spacing = pixdim[1:4]
    if np.any(spacing <= 0):
        spacing = np.sqrt((affine[:3, :3] ** 2).sum(axis=0))
    if np.any(spacing <= 0):
        raise NiftiError(f"{path}: cannot determine positive voxel spacing "
                         f"(pixdim {pixdim[1:4].tolist()})")

    return VoxelGrid(dims=dims, spacing=tuple(spacing), affine=affine, data=data)


def write_nifti(grid: VoxelGrid, path, dtype=np.float32) -> None:
    """Write a VoxelGrid as a single-file NIfTI-1 volume (gzip if *.gz).

    Written with slope=1 / intercept=0; integer dtypes round the values.
    """
    path = Path(path)
    dtype = np.dtype(dtype)
    if dtype not in _DTYPE_CODES:
        raise NiftiError(f"cannot write datatype {dtype}")

    hdr = np.zeros((), dtype=_HEADER_DTYPE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, grid.dims[0], grid.dims[1], grid.dims[2], 1, 1, 1, 1]
    hdr["datatype"] = _DTYPE_CODES[dtype]
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"] = [1.0, grid.spacing[0], grid.spacing[1], grid.spacing[2], 0, 0, 0, 0]
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = _UNITS_MM_SEC
    hdr["descrip"] = b"mrisynth"
    hdr["qform_code"] = 0
    hdr["sform_code"] = 1
    hdr["srow_x"] = grid.affine[0].astype(np.float32)
    hdr["srow_y"] = grid.affine[1].astype(np.float32)
    hdr["srow_z"] = grid.affine[2].astype(np.float32)
    hdr["magic"] = b"n+1"

    if dtype.kind in "iu":
        values = np.rint(grid.data).astype(dtype)
    else:
        values = grid.data.astype(dtype)
    payload = hdr.tobytes() + b"\x00\x00\x00\x00" + values.tobytes(order="F")

    path.parent.mkdir(parents=True, exist_ok=True)
    if path.name.endswith(".gz"):
        # filename="" keeps the gzip FNAME field empty so identical volumes
        # produce byte-identical files regardless of output path
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb",
                               compresslevel=6, mtime=0) as gz:
                gz.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)
