#!/usr/bin/env python3
"""Write the 10000 MNIST digits bundled with the `mnist` npm package as
gzipped IDX files.

The package stores each digit class as a JSON array of pixel intensities
rounded to three decimals (value = round(byte / 255, 3)); the rounding is
injective, so the original bytes are recovered exactly. Usage:

    python3 tools/make_mnist_subset.py OUT_DIR [--tarball PATH]

Without --tarball the script runs `npm pack mnist@1.1.0` in a temporary
directory.
"""
import argparse
import glob
import gzip
import json
import os
import struct
import subprocess
import tarfile
import tempfile


def find_tarball(path):
    if path:
        return path
    tmp = tempfile.mkdtemp()
    subprocess.check_call(["npm", "pack", "mnist@1.1.0"], cwd=tmp)
    return glob.glob(os.path.join(tmp, "mnist-*.tgz"))[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--tarball")
    args = ap.parse_args()

    images, labels = bytearray(), bytearray()
    with tarfile.open(find_tarball(args.tarball)) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            values = json.load(member)["data"]
            if len(values) % 784:
                raise SystemExit(f"digit {digit}: {len(values)} values is not a multiple of 784")
            images.extend(round(v * 255) for v in values)
            labels.extend([digit] * (len(values) // 784))

    n = len(labels)
    os.makedirs(args.out_dir, exist_ok=True)
    img_hdr = struct.pack(">IIII", 0x00000803, n, 28, 28)
    lbl_hdr = struct.pack(">II", 0x00000801, n)
    with gzip.GzipFile(os.path.join(args.out_dir, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(img_hdr + bytes(images))
    with gzip.GzipFile(os.path.join(args.out_dir, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(lbl_hdr + bytes(labels))
    print(f"wrote {n} images to {args.out_dir}")


if __name__ == "__main__":
    main()
