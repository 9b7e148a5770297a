#!/usr/bin/env python3
"""Convert per-class JSON image lists (npm `fashion-mnist` layout) to IDX files.

Each <class>.json holds {"data": [[784 ints 0..255], ...]}. The first
--train-per-class images of every class go to the training split and the rest
to the test split; samples are interleaved round-robin across classes.
"""
import argparse
import json
import struct
from pathlib import Path


def write_idx(images, labels, img_path, lbl_path):
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(lbl_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def interleave(per_class):
    images, labels = [], []
    longest = max(len(v) for v in per_class)
    for i in range(longest):
        for c, v in enumerate(per_class):
            if i < len(v):
                images.append(v[i])
                labels.append(c)
    return images, labels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("json_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train-per-class", type=int, default=6000)
    args = ap.parse_args()

    train, test = [], []
    for c in range(10):
        # The package carries a few empty placeholder entries; drop them.
        data = [img for img in json.loads((args.json_dir / f"{c}.json").read_text())["data"] if img]
        for img in data:
            if len(img) != 784 or not all(0 <= p <= 255 for p in img):
                raise SystemExit(f"class {c}: malformed image")
        train.append(data[: args.train_per_class])
        test.append(data[args.train_per_class :])

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train), ("t10k", test)):
        images, labels = interleave(split)
        write_idx(images, labels, args.out_dir / f"{name}-images-idx3-ubyte", args.out_dir / f"{name}-labels-idx1-ubyte")
        print(f"{name}: {len(images)} images")


if __name__ == "__main__":
    main()
