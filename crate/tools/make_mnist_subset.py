#!/usr/bin/env python3
"""Build the committed desk-scale MNIST subset in IDX format.

Reads the grayscale digit dumps shipped with the `mnist` npm package
(cazala/mnist, ~1000 samples per digit stored as flat JSON arrays of
pixel/255 values rounded to three decimals) and emits a deterministic,
label-stratified train/test pair of IDX files:

    train-images-idx3-ubyte / train-labels-idx1-ubyte   (600 per label)
    t10k-images-idx3-ubyte  / t10k-labels-idx1-ubyte    (250 per label)

Pixel bytes are recovered losslessly via round(v * 255). Selection and
final ordering are shuffled with fixed seeds so the output is bit-stable
across runs.

Usage: make_mnist_subset.py [--digits-dir DIR] [--out-dir DIR]
"""

import argparse
import json
import os
import random
import struct

TRAIN_PER_LABEL = 600
TEST_PER_LABEL = 250
SEED = 20260816


def read_digit(digits_dir: str, digit: int) -> list[bytes]:
    with open(os.path.join(digits_dir, f"{digit}.json")) as f:
        flat = json.load(f)["data"]
    assert len(flat) % 784 == 0, f"digit {digit}: length {len(flat)} not a multiple of 784"
    images = []
    for i in range(0, len(flat), 784):
        images.append(bytes(round(v * 255) for v in flat[i : i + 784]))
    return images


def write_idx_images(path: str, images: list[bytes]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)


def write_idx_labels(path: str, labels: list[int]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--digits-dir", default="/tmp/node_modules/mnist/src/digits")
    ap.add_argument("--out-dir", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist_subset"))
    args = ap.parse_args()

    train: list[tuple[bytes, int]] = []
    test: list[tuple[bytes, int]] = []
    for digit in range(10):
        images = read_digit(args.digits_dir, digit)
        need = TRAIN_PER_LABEL + TEST_PER_LABEL
        assert len(images) >= need, f"digit {digit}: only {len(images)} samples, need {need}"
        order = list(range(len(images)))
        random.Random(SEED + digit).shuffle(order)
        train += [(images[i], digit) for i in order[:TRAIN_PER_LABEL]]
        test += [(images[i], digit) for i in order[TRAIN_PER_LABEL:need]]

    random.Random(SEED).shuffle(train)
    random.Random(SEED + 100).shuffle(test)

    os.makedirs(args.out_dir, exist_ok=True)
    write_idx_images(os.path.join(args.out_dir, "train-images-idx3-ubyte"), [im for im, _ in train])
    write_idx_labels(os.path.join(args.out_dir, "train-labels-idx1-ubyte"), [lb for _, lb in train])
    write_idx_images(os.path.join(args.out_dir, "t10k-images-idx3-ubyte"), [im for im, _ in test])
    write_idx_labels(os.path.join(args.out_dir, "t10k-labels-idx1-ubyte"), [lb for _, lb in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out_dir}")


if __name__ == "__main__":
    main()
