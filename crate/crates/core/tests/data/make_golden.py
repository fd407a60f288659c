"""Writes golden_2x2x2.nii: a fixed int16 volume in single-file NIfTI-1.

The header is packed field by field from the NIfTI-1 layout, independent of
the Rust writer.

    python3 make_golden.py
"""

import os
import struct

HEADER = (
    "<"
    "i"    # sizeof_hdr
    "10s"  # data_type
    "18s"  # db_name
    "i"    # extents
    "h"    # session_error
    "c"    # regular
    "c"    # dim_info
    "8h"   # dim
    "3f"   # intent_p1..p3
    "h"    # intent_code
    "h"    # datatype
    "h"    # bitpix
    "h"    # slice_start
    "8f"   # pixdim
    "f"    # vox_offset
    "f"    # scl_slope
    "f"    # scl_inter
    "h"    # slice_end
    "c"    # slice_code
    "B"    # xyzt_units
    "f"    # cal_max
    "f"    # cal_min
    "f"    # slice_duration
    "f"    # toffset
    "i"    # glmax
    "i"    # glmin
    "80s"  # descrip
    "24s"  # aux_file
    "h"    # qform_code
    "h"    # sform_code
    "3f"   # quatern_b..d
    "3f"   # qoffset_x..z
    "4f"   # srow_x
    "4f"   # srow_y
    "4f"   # srow_z
    "16s"  # intent_name
    "4s"   # magic
)
assert struct.calcsize(HEADER) == 348

DT_INT16 = 4
UNITS_MM = 2
XFORM_SCANNER_ANAT = 1

# x-fastest order: index = i + 2 * (j + 2 * k)
VOXELS = [-1024, -1, 0, 1, 2, 100, 1000, 3071]
STEPS = (-0.5, 0.75, 2.0)
ORIGIN = (10.0, -20.0, 30.0)

header = struct.pack(
    HEADER,
    348,
    b"",
    b"",
    0,
    0,
    b"r",
    b"\0",
    3, 2, 2, 2, 1, 1, 1, 1,
    0.0, 0.0, 0.0,
    0,
    DT_INT16,
    16,
    0,
    1.0, abs(STEPS[0]), abs(STEPS[1]), abs(STEPS[2]), 0.0, 0.0, 0.0, 0.0,
    352.0,
    1.0,
    0.0,
    0,
    b"\0",
    UNITS_MM,
    0.0,
    0.0,
    0.0,
    0.0,
    0,
    0,
    b"golden",
    b"",
    0,
    XFORM_SCANNER_ANAT,
    0.0, 0.0, 0.0,
    0.0, 0.0, 0.0,
    STEPS[0], 0.0, 0.0, ORIGIN[0],
    0.0, STEPS[1], 0.0, ORIGIN[1],
    0.0, 0.0, STEPS[2], ORIGIN[2],
    b"",
    b"n+1\0",
)
extension = b"\0\0\0\0"
data = struct.pack("<8h", *VOXELS)

path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden_2x2x2.nii")
with open(path, "wb") as f:
    f.write(header + extension + data)
