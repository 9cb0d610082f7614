#!/usr/bin/env python3
"""Convert published VGG-19 weights into the vesselgan weights container.

Input: either a torchvision state dict (.pth, e.g. vgg19-dcbb9e9d.pth) or a
.npz archive with the same tensor names. Only the 16 feature-extraction
convolutions are kept; classifier weights are dropped.

Container layout (all little-endian):
    8 bytes   magic "VGANWGT1"
    u64       metadata length
    bytes     JSON metadata {format_version, arrays: [{name, shape}...],
              payload_hash}
    doubles   array payloads concatenated in metadata order

Array names follow block{b}.conv{l}.kernel / .bias with kernels shaped
(out_channels, in_channels, 3, 3), float64.

Usage:
    python3 tools/vgg19_to_container.py vgg19-dcbb9e9d.pth vgg19.vgw
"""

import json
import struct
import sys

import numpy as np

# torchvision `features` indices of the 16 convolutions, grouped per block.
BLOCKS = [
    [0, 2],
    [5, 7],
    [10, 12, 14, 16],
    [19, 21, 23, 25],
    [28, 30, 32, 34],
]

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
U64 = (1 << 64) - 1


def fnv1a64(data: bytes, seed: int = FNV_OFFSET) -> int:
    h = seed
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & U64
    return h


def load_state(path: str):
    if path.endswith(".npz"):
        return dict(np.load(path))
    import torch  # only needed for .pth inputs

    state = torch.load(path, map_location="cpu", weights_only=True)
    return {k: v.numpy() for k, v in state.items()}


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    src, dst = sys.argv[1], sys.argv[2]
    state = load_state(src)

    arrays = []
    for b, convs in enumerate(BLOCKS, start=1):
        for l, idx in enumerate(convs, start=1):
            kernel = np.asarray(state[f"features.{idx}.weight"], dtype=np.float64)
            bias = np.asarray(state[f"features.{idx}.bias"], dtype=np.float64)
            if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
                raise ValueError(f"unexpected kernel shape {kernel.shape} at features.{idx}")
            arrays.append((f"block{b}.conv{l}.kernel", kernel))
            arrays.append((f"block{b}.conv{l}.bias", bias))

    h = FNV_OFFSET
    payload = bytearray()
    meta_arrays = []
    for name, arr in arrays:
        raw = arr.tobytes()  # row-major float64, little-endian on all supported hosts
        h = fnv1a64(name.encode(), h)
        h = fnv1a64(raw, h)
        payload.extend(raw)
        meta_arrays.append({"name": name, "shape": list(arr.shape)})

    meta = {
        "format_version": 1,
        "source": src,
        "arrays": meta_arrays,
        "payload_hash": f"{h:016x}",
    }
    meta_bytes = json.dumps(meta).encode()

    with open(dst, "wb") as f:
        f.write(b"VGANWGT1")
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(bytes(payload))
    total = sum(a.size for _, a in arrays)
    print(f"wrote {dst}: {len(arrays)} arrays, {total} parameters")
    return 0


if __name__ == "__main__":
    sys.exit(main())
