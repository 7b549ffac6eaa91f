"""Volume serialization: the native container and a minimal NIfTI-1 reader.

Native format ("BDLV1"): a single-line UTF-8 JSON header terminated by a
newline, followed by the raw little-endian payload in x-fastest voxel
order. Scalar fields are stored as float32, label fields as uint8, so a
round trip is bitwise lossless for data representable at those widths.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, Unsupported
from .fields import LabelField3D, ScalarField3D

MAGIC = "BDLV1"

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("<u1")}


def write_volume(field: ScalarField3D | LabelField3D, path: str | Path) -> None:
    """Write a field; scalar data as f32, labels as u8."""
    if isinstance(field, LabelField3D):
        dtype_name = "u8"
        if field.data.size and field.data.max() > 255:
            raise FormatError("label values exceed the u8 payload range")
        payload = field.data.astype(_DTYPES["u8"])
        extra = {"num_classes": field.num_classes}
    else:
        dtype_name = "f32"
        payload = field.data.astype(_DTYPES["f32"])
        extra = {}
    header = {
        "magic": MAGIC,
        "dtype": dtype_name,
        "dims": list(field.dims),
        "spacing": list(field.spacing),
        "byte_order": "little",
        **extra,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.asfortranarray(payload).tobytes(order="F"))


def read_volume(path: str | Path) -> ScalarField3D | LabelField3D:
    """Read a native volume; f32 payloads become scalar fields, u8 label fields."""
    with open(path, "rb") as fh:
        line = fh.readline(1 << 16)
        if not line.endswith(b"\n"):
            raise FormatError(f"{path}: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed header: {exc}") from exc
        if not isinstance(header, dict) or header.get("magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, expected {MAGIC!r}")
        if header.get("byte_order") != "little":
            raise FormatError(f"{path}: unsupported byte order {header.get('byte_order')!r}")
        dtype_name = header.get("dtype")
        if dtype_name not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype {dtype_name!r}")
        dims = header.get("dims")
        spacing = header.get("spacing")
        if (
            not isinstance(dims, list)
            or len(dims) != 3
            or any(not isinstance(d, int) or d < 1 for d in dims)
        ):
            raise FormatError(f"{path}: bad dims {dims!r}")
        if not isinstance(spacing, list) or len(spacing) != 3:
            raise FormatError(f"{path}: bad spacing {spacing!r}")
        dtype = _DTYPES[dtype_name]
        count = dims[0] * dims[1] * dims[2]
        raw = fh.read(count * dtype.itemsize + 1)
        if len(raw) != count * dtype.itemsize:
            raise FormatError(
                f"{path}: payload has {len(raw)} bytes, expected {count * dtype.itemsize}"
            )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    spacing = tuple(float(s) for s in spacing)
    if dtype_name == "u8":
        num_classes = header.get("num_classes", int(data.max()) + 1 if data.size else 1)
        return LabelField3D(data.astype(np.int64), num_classes=int(num_classes), spacing=spacing)
    return ScalarField3D(data.astype(np.float64), spacing=spacing)


# --- NIfTI-1 ingestion (uncompressed single volumes only) -------------------

_NIFTI_HEADER_SIZE = 348
_NIFTI_DTYPES = {2: np.dtype("u1"), 4: np.dtype("i2"), 16: np.dtype("f4")}


def read_nifti1(path: str | Path) -> ScalarField3D | LabelField3D:
    """Parse the fixed 348-byte NIfTI-1 header and load one volume.

    Supports datatype codes 2 (uint8, returned as labels), 4 (int16, widened
    to float) and 16 (float32). Handles both byte orders via the sizeof_hdr
    field.
    """
    with open(path, "rb") as fh:
        header = fh.read(_NIFTI_HEADER_SIZE)
        if len(header) < _NIFTI_HEADER_SIZE:
            raise FormatError(f"{path}: truncated header ({len(header)} bytes)")
        magic = header[344:348]
        if magic[:3] not in (b"n+1", b"ni1") or magic[3] != 0:
            raise FormatError(f"{path}: bad NIfTI magic {magic!r}")
        sizeof_hdr = struct.unpack_from("<i", header, 0)[0]
        if sizeof_hdr == _NIFTI_HEADER_SIZE:
            end = "<"
        elif struct.unpack_from(">i", header, 0)[0] == _NIFTI_HEADER_SIZE:
            end = ">"
        else:
            raise FormatError(f"{path}: sizeof_hdr is not 348 in either byte order")

        dim = struct.unpack_from(f"{end}8h", header, 40)
        datatype = struct.unpack_from(f"{end}h", header, 70)[0]
        pixdim = struct.unpack_from(f"{end}8f", header, 76)
        vox_offset = struct.unpack_from(f"{end}f", header, 108)[0]

        ndim = dim[0]
        if not 1 <= ndim <= 7:
            raise FormatError(f"{path}: invalid dim[0]={ndim}")
        shape = [max(1, dim[i + 1]) for i in range(ndim)]
        if any(s != 1 for s in shape[3:]):
            raise Unsupported(f"{path}: multi-volume file (shape {shape})")
        if datatype not in _NIFTI_DTYPES:
            raise Unsupported(f"{path}: datatype code {datatype} not supported")
        dims3 = (shape + [1, 1, 1])[:3]
        dtype = _NIFTI_DTYPES[datatype].newbyteorder(end)

        offset = int(vox_offset)
        if offset < _NIFTI_HEADER_SIZE:
            raise FormatError(f"{path}: vox_offset {vox_offset} inside the header")
        fh.seek(offset)
        count = dims3[0] * dims3[1] * dims3[2]
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated payload")

    # NIfTI stores the first index fastest, matching the package convention
    data = np.frombuffer(raw, dtype=dtype).reshape(dims3, order="F")
    spacing = tuple(abs(float(pixdim[i + 1])) or 1.0 for i in range(3))
    if datatype == 2:
        arr = data.astype(np.int64)
        return LabelField3D(arr, num_classes=int(arr.max()) + 1, spacing=spacing)
    return ScalarField3D(data.astype(np.float32).astype(np.float64), spacing=spacing)


# --- dataset directories -----------------------------------------------------

DATASET_INDEX = "dataset.json"


def save_dataset(splits: dict[str, list], out_dir: str | Path) -> None:
    """Write each case's image and labels plus an index of the split layout."""
    from .phantom import PhantomCase  # local import to avoid a cycle

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"splits": {}}
    for split, cases in splits.items():
        ids = []
        for case in cases:
            assert isinstance(case, PhantomCase)
            write_volume(case.image, out / f"{case.case_id}_image.bdlv")
            write_volume(case.labels, out / f"{case.case_id}_labels.bdlv")
            ids.append(case.case_id)
        index["splits"][split] = ids
    (out / DATASET_INDEX).write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")


def load_dataset(data_dir: str | Path) -> dict[str, list]:
    """Load a dataset directory written by :func:`save_dataset`."""
    from .phantom import PhantomCase

    root = Path(data_dir)
    index_path = root / DATASET_INDEX
    if not index_path.exists():
        raise FormatError(f"{root}: missing {DATASET_INDEX}")
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{index_path}: malformed index: {exc}") from exc
    if not isinstance(index, dict) or not isinstance(index.get("splits"), dict):
        raise FormatError(f"{index_path}: index must map split names to case ids")
    splits: dict[str, list] = {}
    for split, ids in index["splits"].items():
        cases = []
        for case_id in ids:
            image = read_volume(root / f"{case_id}_image.bdlv")
            labels = read_volume(root / f"{case_id}_labels.bdlv")
            if not isinstance(labels, LabelField3D) or not isinstance(image, ScalarField3D):
                raise FormatError(f"{root}: case {case_id} has mismatched volume dtypes")
            tumour = LabelField3D(
                (labels.data != 0).astype(np.int64), num_classes=2, spacing=labels.spacing
            )
            cases.append(
                PhantomCase(
                    case_id=case_id, image=image, labels=labels, whole_tumour=tumour
                )
            )
        splits[split] = cases
    return splits
