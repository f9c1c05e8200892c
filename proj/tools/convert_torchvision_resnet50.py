#!/usr/bin/env python3
"""Convert torchvision ResNet-50 weights into a backbone file for model.pretrained.

Batch norm is folded into the preceding convolution (eval-mode statistics), which
matches the bias-carrying, normalization-free ResNet-50 used by the detector. The
fully connected layer is dropped.

    python3 tools/convert_torchvision_resnet50.py --weights resnet50.pth --out resnet50.backbone
    python3 tools/convert_torchvision_resnet50.py --download --out resnet50.backbone
"""

import argparse
import json
import struct

import numpy as np
import torch
import torchvision

MAGIC = b"AIGVCKPT"
VERSION = 1


def fold(conv_w, bn, prefix, eps=1e-5):
    gamma = bn[prefix + ".weight"].double()
    beta = bn[prefix + ".bias"].double()
    mean = bn[prefix + ".running_mean"].double()
    var = bn[prefix + ".running_var"].double()
    scale = gamma / torch.sqrt(var + eps)
    weight = conv_w.double() * scale.view(-1, 1, 1, 1)
    bias = beta - mean * scale
    return weight.float(), bias.float()


def folded_tensors(state):
    pairs = [("conv1", "bn1")]
    for stage, blocks in enumerate([3, 4, 6, 3], start=1):
        for k in range(blocks):
            base = f"layer{stage}.{k}."
            for i in (1, 2, 3):
                pairs.append((base + f"conv{i}", base + f"bn{i}"))
            if k == 0:
                pairs.append((base + "downsample.0", base + "downsample.1"))
    out = []
    for conv, bn in pairs:
        weight, bias = fold(state[conv + ".weight"], state, bn)
        out.append((f"backbone.{conv}.weight", weight))
        out.append((f"backbone.{conv}.bias", bias))
    return out


def write_backbone(tensors, path):
    header = {
        "kind": "backbone",
        "backbone": "resnet50",
        "params": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    text = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for _, t in tensors:
            f.write(np.ascontiguousarray(t.numpy(), dtype="<f4").tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="torchvision ResNet-50 state_dict (.pth)")
    src.add_argument("--download", action="store_true", help="fetch the IMAGENET1K_V1 weights through torchvision")
    ap.add_argument("--out", required=True, help="output backbone file")
    args = ap.parse_args()

    if args.download:
        model = torchvision.models.resnet50(weights=torchvision.models.ResNet50_Weights.IMAGENET1K_V1)
        state = model.state_dict()
    else:
        state = torch.load(args.weights, map_location="cpu")
        if "state_dict" in state:
            state = state["state_dict"]
    tensors = folded_tensors(state)
    write_backbone(tensors, args.out)
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
