"""ResNet-50 wrapper: classification scores plus the four residual-stage
feature maps, captured with forward hooks.

One network serves both roles. Tap points default to the four residual
stage outputs (layer1..layer4), which for 224 px inputs have spatial sides
56/28/14/7 and channel counts 256/512/1024/2048.
"""

from __future__ import annotations

import sys

import numpy as np
import torch
import torch.nn.functional as F
from torchvision import models

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
INPUT_SIDE = 224
DEFAULT_TAPS = ("layer1", "layer2", "layer3", "layer4")
FEATURE_DIMS = [[56, 56, 256], [28, 28, 512], [14, 14, 1024], [7, 7, 2048]]


class ClassifierBridge:
    """Deterministic CPU/GPU inference with feature taps."""

    def __init__(
        self,
        weights: str = "auto",
        device: str = "cpu",
        score_kind: str = "probabilities",
        taps: tuple[str, ...] = DEFAULT_TAPS,
        seed: int = 0,
    ):
        if len(taps) != 4:
            raise ValueError("exactly four tap points are required")
        torch.manual_seed(seed)
        torch.use_deterministic_algorithms(True)
        self.device = torch.device(device)
        self.score_kind = score_kind
        self.net = self._load(weights).to(self.device).eval()
        self.class_count = self.net.fc.out_features
        self._captured: dict[str, torch.Tensor] = {}
        for name in taps:
            module = getattr(self.net, name)
            module.register_forward_hook(self._capture(name))
        self.taps = taps

    @staticmethod
    def _load(weights: str):
        if weights == "random":
            return models.resnet50(weights=None)
        if weights == "pretrained":
            return models.resnet50(weights=models.ResNet50_Weights.IMAGENET1K_V2)
        if weights == "auto":
            try:
                return models.resnet50(weights=models.ResNet50_Weights.IMAGENET1K_V2)
            except Exception as e:
                print(
                    f"iassa-bridge: pretrained weights unavailable ({e}); "
                    "falling back to seeded random initialization",
                    file=sys.stderr,
                )
                return models.resnet50(weights=None)
        # Anything else is a path to a state dict.
        net = models.resnet50(weights=None)
        net.load_state_dict(torch.load(weights, map_location="cpu"))
        return net

    def _capture(self, name):
        def hook(module, inputs, output):
            self._captured[name] = output.detach()

        return hook

    def _preprocess(self, arrays: list[np.ndarray]) -> torch.Tensor:
        batch = []
        for arr in arrays:
            t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
            t = t.permute(2, 0, 1)  # HWC -> CHW
            if t.shape[0] == 1:
                t = t.expand(3, -1, -1)
            if t.shape[1:] != (INPUT_SIDE, INPUT_SIDE):
                t = F.interpolate(
                    t[None], size=(INPUT_SIDE, INPUT_SIDE), mode="bilinear",
                    align_corners=False,
                )[0]
            batch.append(t)
        x = torch.stack(batch)
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        return ((x - mean) / std).to(self.device)

    def score(self, arrays: list[np.ndarray]) -> list[list[float]]:
        """Score vectors (length class_count) for a batch of HWC images."""
        with torch.no_grad():
            logits = self.net(self._preprocess(arrays))
            if self.score_kind == "probabilities":
                logits = torch.softmax(logits, dim=1)
        return logits.cpu().double().tolist()

    def features(self, array: np.ndarray) -> list[np.ndarray]:
        """Four residual-stage outputs as HWC float arrays, shallow to deep."""
        self._captured.clear()
        with torch.no_grad():
            self.net(self._preprocess([array]))
        out = []
        for name in self.taps:
            t = self._captured[name][0]  # CHW
            out.append(t.permute(1, 2, 0).cpu().numpy().astype(np.float64))
        return out
