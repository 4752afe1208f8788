#!/usr/bin/env python3
"""Regenerate data/graphs/mbnv3_ssdlite_320x240.json.

Walks the torchvision SSDLite320 / MobileNetV3-Large definition (91 COCO
classes, the configuration the public 3.44 M parameter figure refers to)
with torch.fx and emits one record per operator. BatchNorm is folded into
the preceding convolution (adds a bias) and ReLU/ReLU6 is fused into the
producing convolution. The frame enters as 3x240x320 and is resized to the
model's fixed 320x320 input, as the torchvision transform does.

Usage: python3 tools/gen_mbnv3_ssdlite.py > data/graphs/mbnv3_ssdlite_320x240.json
"""
import json
import operator
import sys

import torch
import torch.fx
from torch.fx.passes.shape_prop import ShapeProp
from torchvision.models.detection import ssdlite320_mobilenet_v3_large

IN_H, IN_W = 240, 320
MODEL_H, MODEL_W = 320, 320


class Wrapper(torch.nn.Module):
    def __init__(self, det):
        super().__init__()
        self.backbone = det.backbone
        self.cls = det.head.classification_head.module_list
        self.reg = det.head.regression_head.module_list

    def forward(self, x):
        feats = list(self.backbone(x).values())
        outs = []
        for i, f in enumerate(feats):
            outs.append(self.cls[i](f))
            outs.append(self.reg[i](f))
        return outs


def shape_of(node):
    s = node.meta["tensor_meta"].shape
    return [int(s[1]), int(s[2]), int(s[3])]


def main():
    det = ssdlite320_mobilenet_v3_large(weights=None, weights_backbone=None, num_classes=91)
    det.eval()
    w = Wrapper(det)
    gm = torch.fx.symbolic_trace(w)
    ShapeProp(gm).propagate(torch.zeros(1, 3, MODEL_H, MODEL_W))
    mods = dict(gm.named_modules())

    layers = []
    alias = {}  # fx node name -> layer name producing the tensor
    by_name = {}
    counter = {}

    def fresh(kind):
        counter[kind] = counter.get(kind, 0) + 1
        return f"{kind}_{counter[kind]}"

    def emit(rec):
        layers.append(rec)
        by_name[rec["name"]] = rec
        return rec["name"]

    emit({
        "name": "resize", "op": "resize", "inputs": ["image"],
        "in_shape": [3, IN_H, IN_W], "out_shape": [3, MODEL_H, MODEL_W],
        "kernel": [1, 1], "stride": 1, "padding": 0, "groups": 1,
        "bias": False, "activation": "none", "param_count": 0, "elementwise": True,
    })

    head_outputs = []
    for node in gm.graph.nodes:
        if node.op == "placeholder":
            alias[node.name] = "resize"
            continue
        if node.op == "output":
            for a in node.args[0]:
                head_outputs.append(alias[a.name])
            continue
        if node.op == "call_module":
            mod = mods[node.target]
            src = alias[node.args[0].name]
            if isinstance(mod, torch.nn.Conv2d):
                cin, cout, g = mod.in_channels, mod.out_channels, mod.groups
                kh, kw = mod.kernel_size
                assert mod.stride[0] == mod.stride[1]
                assert mod.padding[0] == mod.padding[1]
                if g > 1 and g == cin == cout:
                    op = "depthwise_conv2d"
                elif g == 1 and kh == 1 and kw == 1:
                    op = "pointwise_conv2d"
                else:
                    op = "conv2d"
                name = fresh(op.split("_")[0] if op != "conv2d" else "conv")
                params = kh * kw * (cin // g) * cout + cout
                alias[node.name] = emit({
                    "name": name, "op": op, "inputs": [src],
                    "in_shape": shape_of(node.args[0]), "out_shape": shape_of(node),
                    "kernel": [kh, kw], "stride": mod.stride[0], "padding": mod.padding[0],
                    "groups": g, "bias": True, "activation": "none",
                    "param_count": params, "elementwise": False,
                })
            elif isinstance(mod, torch.nn.BatchNorm2d):
                alias[node.name] = src  # folded into the convolution
            elif isinstance(mod, (torch.nn.ReLU, torch.nn.ReLU6)):
                rec = by_name[src]
                assert rec["op"].endswith("conv2d") and rec["activation"] == "none"
                rec["activation"] = "relu"
                alias[node.name] = src
            elif isinstance(mod, (torch.nn.Hardswish, torch.nn.Hardsigmoid)):
                op = "hswish" if isinstance(mod, torch.nn.Hardswish) else "hsigmoid"
                shp = shape_of(node)
                alias[node.name] = emit({
                    "name": fresh(op), "op": op, "inputs": [src],
                    "in_shape": shp, "out_shape": shp,
                    "kernel": [1, 1], "stride": 1, "padding": 0, "groups": 1,
                    "bias": False, "activation": "none", "param_count": 0, "elementwise": True,
                })
            elif isinstance(mod, torch.nn.AdaptiveAvgPool2d):
                ins = shape_of(node.args[0])
                alias[node.name] = emit({
                    "name": fresh("pool"), "op": "pool", "inputs": [src],
                    "in_shape": ins, "out_shape": shape_of(node),
                    "kernel": [ins[1], ins[2]], "stride": 1, "padding": 0, "groups": 1,
                    "bias": False, "activation": "none", "param_count": 0, "elementwise": True,
                })
            else:
                raise SystemExit(f"unhandled module {type(mod)}")
        elif node.op == "call_function":
            if node.target in (operator.add, operator.iadd, torch.add):
                a, b = node.args
                shp = shape_of(node)
                alias[node.name] = emit({
                    "name": fresh("add"), "op": "add", "inputs": [alias[a.name], alias[b.name]],
                    "in_shape": shape_of(a), "out_shape": shp,
                    "kernel": [1, 1], "stride": 1, "padding": 0, "groups": 1,
                    "bias": False, "activation": "none", "param_count": 0, "elementwise": True,
                })
            elif node.target in (operator.mul, torch.mul):
                a, b = node.args
                # feature map first, per-channel scale second
                if shape_of(a)[1] == 1:
                    a, b = b, a
                alias[node.name] = emit({
                    "name": fresh("mul"), "op": "mul", "inputs": [alias[a.name], alias[b.name]],
                    "in_shape": shape_of(a), "out_shape": shape_of(node),
                    "kernel": [1, 1], "stride": 1, "padding": 0, "groups": 1,
                    "bias": False, "activation": "none", "param_count": 0, "elementwise": True,
                })
            elif node.target is operator.getitem:
                alias[node.name] = alias[node.args[0].name]
            else:
                raise SystemExit(f"unhandled function {node.target}")
        elif node.op == "call_method":
            if node.target == "values":
                alias[node.name] = None
            else:
                raise SystemExit(f"unhandled method {node.target}")

    reshapes = []
    total = 0
    for src in head_outputs:
        c, h, w_ = by_name[src]["out_shape"]
        n = c * h * w_
        total += n
        reshapes.append(emit({
            "name": fresh("reshape"), "op": "reshape", "inputs": [src],
            "in_shape": [c, h, w_], "out_shape": [n, 1, 1],
            "kernel": [1, 1], "stride": 1, "padding": 0, "groups": 1,
            "bias": False, "activation": "none", "param_count": 0, "elementwise": True,
        }))
    first = by_name[reshapes[0]]["out_shape"]
    emit({
        "name": "ssd_decode", "op": "ssd_head", "inputs": reshapes,
        "in_shape": first, "out_shape": [total, 1, 1],
        "kernel": [1, 1], "stride": 1, "padding": 0, "groups": 1,
        "bias": False, "activation": "none", "param_count": 0, "elementwise": True,
    })

    doc = {
        "version": 1,
        "name": "mbnv3_ssdlite_320x240",
        "element_bytes": 1,
        "input": {"name": "image", "shape": [3, IN_H, IN_W]},
        "layers": layers,
    }
    out = json.dumps(doc, indent=None, separators=(",", ":"))
    # one record per line
    head, body = out.split('"layers":[', 1)
    recs = json.dumps(layers, separators=(",", ":"))[1:-1].replace("},{", "},\n    {")
    sys.stdout.write(head + '"layers":[\n    ' + recs + "\n]}\n")


if __name__ == "__main__":
    main()
