#!/usr/bin/env python3
# Copyright 2026 The mmfhe Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Builds gzipped IDX train/test files from the digits bundled in the npm
`mnist` package (10,000 real MNIST digits, pixel/255 rounded to 3 decimals).

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import argparse
import gzip
import json
import pathlib
import struct

import numpy as np


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(array.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20221)
    args = ap.parse_args()

    images, labels = [], []
    for d in range(10):
        raw = json.loads((pathlib.Path(args.digits_dir) / f"{d}.json").read_text())["data"]
        a = np.rint(np.asarray(raw).reshape(-1, 28, 28) * 255.0).clip(0, 255)
        images.append(a.astype(np.uint8))
        labels += [d] * len(a)
    images = np.concatenate(images)
    labels = np.asarray(labels, dtype=np.uint8)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    test, train = order[: args.test], order[args.test :]
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[train], 0x00000803)
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[train], 0x00000801)
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[test], 0x00000803)
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[test], 0x00000801)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
