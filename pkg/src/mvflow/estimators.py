"""Scikit-learn style estimators over the two trainable components.

``VideoAutoencoder`` wraps the codec (fit/transform/inverse_transform on
video batches); ``MultiViewTranslator`` wraps the three-stage flow training
(fit on clip bundles, predict/extend to generate views). Both follow the
usual conventions: constructor arguments are stored verbatim, learned state
lands in trailing-underscore attributes, fit returns self.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .config import STAGES, merge_config
from .metrics import psnr
from .rng import RandomStream
from .training import (bundle_videos, clip_features, extend_clip, sample_clip,
                       train_flow, train_vae)
from .vae import vae_decode, vae_encode


class VideoAutoencoder(TransformerMixin, BaseEstimator):
    """Deterministic 8x8x8 video codec fitted by MSE.

    X is a batch of (3, T, H, W) videos in [0, 1] (array or list) or a list
    of clip bundles, whose views pool into one sample set.
    """

    def __init__(self, channels: int = 8, widths=(32, 112, 224),
                 lr: float = 1.2e-3, warmup: int = 100, steps: int = 2000,
                 batch: int = 4, seed: int = 0):
        self.channels = channels
        self.widths = widths
        self.lr = lr
        self.warmup = warmup
        self.steps = steps
        self.batch = batch
        self.seed = seed

    def _config(self) -> dict:
        return merge_config({"vae": {
            "channels": self.channels, "widths": list(self.widths),
            "lr": self.lr, "warmup": self.warmup, "steps": self.steps,
            "batch": self.batch, "seed": self.seed,
        }})

    def fit(self, X, y=None):
        self.log_ = []
        self.params_ = train_vae(X, self._config(),
                                 RandomStream(self.seed, 0), log_sink=self.log_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValueError("estimator is not fitted; call fit first")

    def transform(self, X) -> np.ndarray:
        """Encode a batch of videos to (N, C, T/8, H/8, W/8) latents."""
        self._check_fitted()
        return np.stack([vae_encode(self.params_, np.asarray(v, np.float32))
                         for v in X])

    def inverse_transform(self, Z) -> np.ndarray:
        """Decode a batch of latents back to clamped [0, 1] videos."""
        self._check_fitted()
        return np.stack([vae_decode(self.params_, z) for z in Z])

    def score(self, X, y=None) -> float:
        """Mean reconstruction PSNR (dB) over the batch."""
        self._check_fitted()
        videos = [np.asarray(v, np.float32) for v in X]
        recs = self.inverse_transform(self.transform(videos))
        return float(np.mean([psnr(r, v) for r, v in zip(recs, videos)]))


class MultiViewTranslator(BaseEstimator):
    """Three-stage rectified-flow translator over a fitted codec.

    ``vae`` is a fitted VideoAutoencoder or a raw VAE parameter dict. fit(X)
    takes clip bundles and runs the single -> multi -> hetero schedule for
    ``stage_steps`` optimizer steps each; predict(X) generates all views of
    each clip from its controls, geometry, and style ids.
    """

    def __init__(self, vae=None, d: int = 64, blocks: int = 4, heads: int = 4,
                 mlp_ratio: int = 4, styles: int = 4,
                 stage_steps=(1000, 1000, 1000), lr: float = 1e-4,
                 batch: int = 2, p_hetero: float = 0.5,
                 lambda_wav: float = 0.1, drop_depth_p: float = 0.1,
                 drop_sketch_p: float = 0.1, sample_steps: int = 30,
                 seed: int = 0, use_pointcloud: bool = True,
                 use_rays: bool = True, use_crossview: bool = True):
        self.vae = vae
        self.d = d
        self.blocks = blocks
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.styles = styles
        self.stage_steps = stage_steps
        self.lr = lr
        self.batch = batch
        self.p_hetero = p_hetero
        self.lambda_wav = lambda_wav
        self.drop_depth_p = drop_depth_p
        self.drop_sketch_p = drop_sketch_p
        self.sample_steps = sample_steps
        self.seed = seed
        self.use_pointcloud = use_pointcloud
        self.use_rays = use_rays
        self.use_crossview = use_crossview

    def _vae_params(self) -> dict:
        if isinstance(self.vae, VideoAutoencoder):
            self.vae._check_fitted()
            return self.vae.params_
        if isinstance(self.vae, dict):
            return self.vae
        raise ValueError("vae must be a fitted VideoAutoencoder or a parameter dict")

    def _config(self, bundle, clips: int, steps: int, stage: str) -> dict:
        vae_params = self._vae_params()
        c_lat = vae_params["vae.enc4.w"].data.shape[0] \
            if hasattr(vae_params["vae.enc4.w"], "data") \
            else vae_params["vae.enc4.w"].shape[0]
        k = len(bundle.views)
        _, t, h, w = bundle.views[0].rgb.shape
        return merge_config({
            "data": {"clips": clips, "K": k, "T": t, "H": h, "W": w,
                     "styles": self.styles},
            "vae": {"channels": int(c_lat)},
            "model": {"d": self.d, "blocks": self.blocks, "heads": self.heads,
                      "mlp_ratio": self.mlp_ratio, "views": k,
                      "styles": self.styles, "c_lat": int(c_lat),
                      "t_lat": t // 8, "h_lat": h // 8, "w_lat": w // 8,
                      "use_pointcloud": self.use_pointcloud,
                      "use_rays": self.use_rays,
                      "use_crossview": self.use_crossview},
            "train": {"stage": stage, "steps": steps, "lr": self.lr,
                      "batch": self.batch, "p_hetero": self.p_hetero,
                      "lambda_wav": self.lambda_wav,
                      "drop_depth_p": self.drop_depth_p,
                      "drop_sketch_p": self.drop_sketch_p, "seed": self.seed},
            "sample": {"steps": self.sample_steps},
        })

    def fit(self, X, y=None):
        """Run all three stages on clip bundles X."""
        clips = list(X)
        if not clips:
            raise ValueError("empty dataset")
        if len(self.stage_steps) != 3 or min(self.stage_steps) < 1:
            raise ValueError("stage_steps must give three positive step counts")
        vae_params = self._vae_params()
        features = [clip_features(b, vae_params, name=f"clip_{i:04d}")
                    for i, b in enumerate(clips)]
        self.logs_ = {}
        params = None
        for stage, steps in zip(STAGES, self.stage_steps):
            cfg = self._config(clips[0], len(clips), steps, stage)
            self.logs_[stage] = []
            params, _ = train_flow(features, cfg, stage, params=params,
                                   log_sink=self.logs_[stage])
        self.params_ = params
        self.config_ = cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValueError("estimator is not fitted; call fit first")

    def _features(self, bundle):
        return clip_features(bundle, self._vae_params())

    def predict(self, X, seed: int | None = None, steps: int | None = None,
                modalities: str = "both") -> list:
        """Generate every view of each clip; list of (K, 3, T, H, W) arrays.

        ``modalities`` is "both", "sketch" (depth dropped) or "depth"
        (sketch dropped).
        """
        self._check_fitted()
        present = {"both": (True, True), "sketch": (True, False),
                   "depth": (False, True)}[modalities]
        vae_params = self._vae_params()
        out = []
        for bundle in X:
            latents = sample_clip(self._features(bundle), self.params_,
                                  self.config_, seed=seed, steps=steps,
                                  present=present)
            out.append(np.stack([vae_decode(vae_params, z) for z in latents]))
        return out

    def extend(self, bundle, given, target: int, seed: int | None = None,
               steps: int | None = None) -> np.ndarray:
        """Regenerate view ``target`` conditioned on freshly generated
        ``given`` views; returns the decoded (3, T, H, W) video."""
        self._check_fitted()
        feat = self._features(bundle)
        joint = sample_clip(feat, self.params_, self.config_, seed=seed,
                            steps=steps)
        latent = extend_clip(feat, self.params_, self.config_,
                             {int(v): joint[int(v)] for v in given},
                             int(target), seed=seed, steps=steps)
        return vae_decode(self._vae_params(), latent)

    def score(self, X, y=None, seed: int | None = None) -> float:
        """Mean PSNR (dB) of generated views against the styled targets."""
        generated = self.predict(X, seed=seed)
        vals = []
        for bundle, gen in zip(X, generated):
            ref = bundle_videos(bundle)
            vals.extend(psnr(g, r) for g, r in zip(gen, ref))
        return float(np.mean(vals))
