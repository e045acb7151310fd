#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package to IDX files.

The package bundles 10,000 MNIST digits stored as per-class JSON arrays of
pixel intensities (value = byte / 255 rounded to 3 decimals).  Bytes are
recovered exactly with round(v * 255).  Samples are shuffled with a fixed
seed and split into a train part and a test part, each written in the
standard big-endian IDX layout so the regular MNIST loader reads them.
"""
import argparse
import json
import os
import random
import struct


def read_digits(digits_dir):
    samples = []
    for label in range(10):
        with open(os.path.join(digits_dir, f"{label}.json")) as f:
            data = json.load(f)["data"]
        if len(data) % 784:
            raise SystemExit(f"{label}.json: length {len(data)} not a multiple of 784")
        for i in range(len(data) // 784):
            row = data[i * 784:(i + 1) * 784]
            samples.append((bytes(int(round(v * 255)) for v in row), label))
    return samples


def write_idx(prefix, samples):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20211)
    args = ap.parse_args()
    samples = read_digits(args.digits_dir)
    random.Random(args.seed).shuffle(samples)
    os.makedirs(args.out_dir, exist_ok=True)
    split = len(samples) - args.test
    write_idx(os.path.join(args.out_dir, "train"), samples[:split])
    write_idx(os.path.join(args.out_dir, "t10k"), samples[split:])
    print(f"wrote {split} train / {len(samples) - split} test samples to {args.out_dir}")


if __name__ == "__main__":
    main()
