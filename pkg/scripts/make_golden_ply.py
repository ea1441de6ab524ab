#!/usr/bin/env python3
"""Author tests/data/golden_two_splats.ply with a raw struct packer.

Deliberately independent of confsplat.sceneio: the golden file pins the byte
layout the loader must understand. Run once; the output is checked in.
"""

import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_two_splats.ply"

PROPS = (
    "x y z nx ny nz f_dc_0 f_dc_1 f_dc_2 opacity "
    "scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3 "
    "conf_alpha_raw conf_beta_raw"
).split()

# two splats, SH degree 0, with confidence raws
ROWS = [
    # x    y    z    nx ny nz  dc0   dc1    dc2   opac  s0    s1    s2    r0  r1 r2 r3  ra     rb
    [0.5, -0.25, 4.0, 0, 0, 0, 0.70, -0.30, 0.10, 1.25, -1.6, -1.2, -1.9, 1.0, 0, 0, 0, 0.80, 0.20],
    [-0.75, 0.50, 5.5, 0, 0, 0, -0.20, 0.60, 0.40, 0.40, -2.0, -1.5, -1.1, 0.0, 1.0, 0, 0, -0.30, 1.10],
]


def main():
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(ROWS)}"]
    header += [f"property float {p}" for p in PROPS]
    header.append("end_header")
    body = b"".join(struct.pack(f"<{len(PROPS)}f", *row) for row in ROWS)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_bytes(("\n".join(header) + "\n").encode("ascii") + body)
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
