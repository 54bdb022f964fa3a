#!/usr/bin/env python3
"""Export torchvision's ImageNet ResNet-50 as TorchScript for the C++ loader.

The stage extractor copies parameters and buffers by name (conv1, bn1,
layer1..layer4), so the scripted module is written unchanged.
"""

import argparse
import os
from pathlib import Path

import torch
import torchvision


def default_output() -> Path:
    home = Path(os.environ.get("TORCH_HOME", Path.home() / ".cache" / "torch"))
    return home / "dagan" / "resnet50_scripted.pt"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=default_output())
    parser.add_argument("--weights", default="IMAGENET1K_V1", help="torchvision weight enum name, or none for random init")
    args = parser.parse_args()

    weights = None if args.weights.lower() == "none" else args.weights
    model = torchvision.models.resnet50(weights=weights).eval()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    torch.jit.script(model).save(str(args.out))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
