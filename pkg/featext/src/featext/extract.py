"""Turn a directory of images into an RSFT feature file.

The backbone is a 50-layer residual network with its classification layer
removed, so each image maps to the 2048-dim output of the penultimate
(pooled) layer. Images get the canonical evaluation preprocessing: resize
the short side to 256, center-crop 224, scale to [0, 1], normalize with the
ImageNet statistics.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models
from torchvision.models import ResNet50_Weights
from torchvision.transforms import functional as TF

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".tif", ".tiff", ".bmp"}
IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]
RSFT_MAGIC = b"RSFT"


@dataclass
class ExtractionManifest:
    image_dir: str
    output_path: str
    model_name: str = "resnet50"
    expected_dim: int = 2048
    weights: str = "pretrained"  # pretrained | random | path to a state dict
    batch_size: int = 8
    seed: int = 0
    skipped: list = field(default_factory=list)


def load_backbone(manifest: ExtractionManifest) -> torch.nn.Module:
    """ResNet-50 with the final classification layer replaced by identity."""
    if manifest.model_name != "resnet50":
        raise ValueError(f"unsupported model '{manifest.model_name}'")
    if manifest.weights == "pretrained":
        net = models.resnet50(weights=ResNet50_Weights.IMAGENET1K_V1)
    elif manifest.weights == "random":
        torch.manual_seed(manifest.seed)
        net = models.resnet50(weights=None)
        _calibrate_batchnorm(net, manifest.seed)
    else:
        net = models.resnet50(weights=None)
        net.load_state_dict(torch.load(manifest.weights, map_location="cpu"))
    net.fc = torch.nn.Identity()
    net.eval()
    return net


def _calibrate_batchnorm(net, seed, passes=3, batch=8):
    """Set BatchNorm running stats from seeded noise forward passes.

    A freshly initialized network keeps the default running stats (mean 0,
    var 1), which bear no relation to its actual activation scales, so
    eval-mode outputs explode layer by layer. A few cumulative-average
    passes put the random backbone's features in a realistic range.
    """
    for module in net.modules():
        if isinstance(module, torch.nn.BatchNorm2d):
            module.momentum = None  # cumulative moving average
    net.train()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _ in range(passes):
            net(torch.randn(batch, 3, 224, 224, generator=gen))


def preprocess(image: Image.Image) -> torch.Tensor:
    image = image.convert("RGB")
    tensor = TF.to_tensor(TF.center_crop(TF.resize(image, 256), [224, 224]))
    return TF.normalize(tensor, IMAGENET_MEAN, IMAGENET_STD)


def list_images(image_dir) -> list[Path]:
    root = Path(image_dir)
    if not root.is_dir():
        raise ValueError(f"image directory '{image_dir}' does not exist")
    paths = [p for p in root.iterdir()
             if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS]
    return sorted(paths, key=lambda p: p.name)


def write_rsft(path, named_vectors, dim) -> None:
    with open(path, "wb") as fh:
        fh.write(RSFT_MAGIC)
        fh.write(struct.pack("<II", len(named_vectors), dim))
        for name, vec in named_vectors:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def extract_features(manifest: ExtractionManifest) -> int:
    """Run the backbone over every readable image; returns the record count.

    Unreadable images are skipped with a warning (collected in
    `manifest.skipped`); a backbone output dim different from
    `expected_dim` aborts. Records are written in sorted filename order.
    """
    paths = list_images(manifest.image_dir)
    if not paths:
        raise ValueError(f"no images found under '{manifest.image_dir}'")
    backbone = load_backbone(manifest)

    batches: list[tuple[str, torch.Tensor]] = []
    for path in paths:
        try:
            with Image.open(path) as img:
                batches.append((path.name, preprocess(img)))
        except Exception as exc:  # PIL raises a zoo of errors on bad files
            manifest.skipped.append(path.name)
            print(f"warning: skipping unreadable image {path.name}: {exc}",
                  file=sys.stderr)
    if not batches:
        raise ValueError("every image in the directory was unreadable")

    named_vectors = []
    with torch.no_grad():
        for start in range(0, len(batches), manifest.batch_size):
            chunk = batches[start : start + manifest.batch_size]
            stacked = torch.stack([tensor for _, tensor in chunk])
            out = backbone(stacked)
            if out.shape[1] != manifest.expected_dim:
                raise ValueError(
                    f"backbone produced dim {out.shape[1]}, "
                    f"expected {manifest.expected_dim}"
                )
            for (name, _), row in zip(chunk, out):
                named_vectors.append((name, row.numpy()))

    write_rsft(manifest.output_path, named_vectors, manifest.expected_dim)
    if manifest.skipped:
        print("skipped images: " + ", ".join(manifest.skipped), file=sys.stderr)
    return len(named_vectors)
