#!/usr/bin/env python3
"""Write a torchvision ResNet state_dict as a featimit weights archive.

    python tools/export_torchvision_weights.py wide_resnet50 out.fimw
    python tools/export_torchvision_weights.py resnet18 out.fimw --random --float64

Pretrained weights come from the torchvision cache (downloaded on first use).
Place the result at $FEATIMIT_WEIGHTS_DIR/<architecture>.fimw (default
~/.cache/featimit) to use `teacher.weights: registry`.
"""

import argparse
import struct
import sys

ARCHITECTURES = {
    "resnet18": ("resnet18", "ResNet18_Weights"),
    "resnet50": ("resnet50", "ResNet50_Weights"),
    "wide_resnet50": ("wide_resnet50_2", "Wide_ResNet50_2_Weights"),
}

_FLOAT32, _FLOAT64 = 0, 1


def _str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def write_archive(path, state, meta, float64=False):
    """Serialize {name: array-like} in the FIMW layout; keys are sorted."""
    import numpy as np

    with open(path, "wb") as f:
        f.write(b"FIMW")
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<I", len(meta)))
        for k in sorted(meta):
            f.write(_str(k) + _str(meta[k]))
        names = sorted(n for n in state if not n.endswith("num_batches_tracked"))
        f.write(struct.pack("<I", len(names)))
        for name in names:
            a = np.ascontiguousarray(np.asarray(state[name], dtype="<f8" if float64 else "<f4"))
            f.write(_str(name))
            f.write(struct.pack("<BI", _FLOAT64 if float64 else _FLOAT32, a.ndim))
            f.write(struct.pack("<%dq" % a.ndim, *a.shape))
            f.write(a.tobytes())


def build_model(architecture, random_init):
    import torchvision

    ctor, weights_enum = ARCHITECTURES[architecture]
    weights = None if random_init else getattr(torchvision.models, weights_enum).IMAGENET1K_V1
    return getattr(torchvision.models, ctor)(weights=weights)


def export(model, architecture, path, float64=False):
    state = {k: v.detach().cpu().double().numpy() for k, v in model.state_dict().items()}
    write_archive(path, state, {"architecture": architecture, "source": "torchvision"}, float64)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("architecture", choices=sorted(ARCHITECTURES))
    p.add_argument("output")
    p.add_argument("--random", action="store_true", help="random initialisation instead of ImageNet weights")
    p.add_argument("--seed", type=int, default=0, help="torch seed for --random")
    p.add_argument("--float64", action="store_true", help="store float64 instead of float32")
    args = p.parse_args(argv)

    import torch

    torch.manual_seed(args.seed)
    export(build_model(args.architecture, args.random), args.architecture, args.output, args.float64)
    print("wrote %s" % args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
