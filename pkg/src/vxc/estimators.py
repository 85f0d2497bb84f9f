"""scikit-learn style wrappers around the codec and the joint reconstructors."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from vxc.autodiff.tensor import Tensor, no_grad
from vxc.codec import (Bitstream, CodecConfig, CodecModel, compress, compression_ratio, decompress, to_external,
                       to_internal)
from vxc.data.dataset import SplitData
from vxc.evaluate import predict_occupancy
from vxc.joint import JointConfig
from vxc.recon3d import IOU_THRESHOLD, Recon3DConfig, batch_iou
from vxc.trainer import TrainConfig, Trainer, fit_codec
from vxc.validation import check_grids, check_images, check_is_fitted, check_random_state, check_views


class ImageCodec(BaseEstimator, TransformerMixin):
    """Iterative binary image codec.

    ``transform`` maps (n, H, W, 3) images in [0, 1] to ±1 codes of shape
    (n, n_iter, m); ``inverse_transform`` decodes them.

    Parameters
    ----------
    variant : {"small", "original"}
        Code depth and decoder layout; the small variant halves the code size.
    gamma : {0, 1}
        0 decodes a full image every iteration, 1 accumulates residual increments.
    n_iter_max : int
        Largest iteration count the trained model supports.
    n_iter : int or None
        Iterations used by ``transform``; None means ``n_iter_max``.
    """

    def __init__(self, variant: str = "small", gamma: int = 0, n_iter_max: int = 8, n_iter: Optional[int] = None,
                 epochs: int = 20, batch_size: int = 6, lr: float = 1e-3, random_state=0, dtype: str = "float32"):
        self.variant = variant
        self.gamma = gamma
        self.n_iter_max = n_iter_max
        self.n_iter = n_iter
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state
        self.dtype = dtype

    def _n(self) -> int:
        return self.n_iter_max if self.n_iter is None else self.n_iter

    def fit(self, X, y=None):
        X = check_images(X)
        rng = check_random_state(self.random_state)
        cfg = CodecConfig(variant=self.variant, gamma=self.gamma, n_iter_max=self.n_iter_max,
                          height=X.shape[1], width=X.shape[2])
        self.model_ = CodecModel(cfg, rng, np.dtype(self.dtype))
        self.loss_curve_ = fit_codec(self.model_, to_internal(X), self.epochs, self.batch_size, self.lr, rng)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self)
        cfg = self.model_.cfg
        X = check_images(X, cfg.height, cfg.width)
        with no_grad():
            trace = self.model_.run(Tensor(to_internal(X, self.model_.dtype)), self._n(), train=False)
        return np.stack([b.data.reshape(len(X), -1) for b in trace.codes], axis=1).astype(np.int8)

    def inverse_transform(self, codes) -> np.ndarray:
        check_is_fitted(self)
        codes = np.asarray(codes)
        cfg = self.model_.cfg
        shape = (len(codes),) + cfg.code_shape
        with no_grad():
            x_hat = self.model_.decode_codes([Tensor(codes[:, t].reshape(shape).astype(self.model_.dtype))
                                              for t in range(codes.shape[1])])
        return to_external(x_hat.data)

    def compress(self, image) -> bytes:
        check_is_fitted(self)
        img = check_images(image, self.model_.cfg.height, self.model_.cfg.width)[0]
        bs, _ = compress(self.model_, img, self._n())
        return bs.to_bytes()

    def decompress(self, data: bytes, n_iter: Optional[int] = None) -> np.ndarray:
        check_is_fitted(self)
        return decompress(self.model_, Bitstream.from_bytes(data), n_iter)

    @property
    def compression_ratio_(self):
        check_is_fitted(self)
        return compression_ratio(self.model_.cfg, self._n())


class JointReconstructor(BaseEstimator):
    """Multi-view occupancy reconstruction with a built-in bit budget.

    ``fit`` takes view stacks (n, V, H, W, 3) in [0, 1] and (n, D, D, D)
    occupancy grids; ``predict_proba`` returns occupancy probabilities and
    ``score`` the mean IoU at threshold ``tau``.
    """

    def __init__(self, kind: str = "implicit", K: int = 64, n_hidden: int = 32, d_out: int = 32,
                 n_iter_max: int = 8, n_iter: Optional[int] = None, float_code: bool = False, epochs: int = 20,
                 batch_size: int = 6, repeats: int = 1, lr: float = 1e-3, random_state: int = 0,
                 dtype: str = "float32", tau: float = IOU_THRESHOLD):
        self.kind = kind
        self.K = K
        self.n_hidden = n_hidden
        self.d_out = d_out
        self.n_iter_max = n_iter_max
        self.n_iter = n_iter
        self.float_code = float_code
        self.epochs = epochs
        self.batch_size = batch_size
        self.repeats = repeats
        self.lr = lr
        self.random_state = random_state
        self.dtype = dtype
        self.tau = tau

    def _train_config(self, height: int, width: int) -> TrainConfig:
        recon = Recon3DConfig.desk(K=self.K, n_hidden=self.n_hidden, d_out=self.d_out, height=height, width=width)
        codec = None
        if self.kind != "implicit":
            codec = CodecConfig(variant="small", n_iter_max=self.n_iter_max, height=height, width=width)
        joint = JointConfig(kind=self.kind, recon=recon, codec=codec, float_code=self.float_code)
        return TrainConfig(joint=joint, batch_size=self.batch_size, epochs=self.epochs, lr=self.lr,
                           seed=int(self.random_state), repeats=self.repeats, dtype=self.dtype)

    def fit(self, X, y):
        X = check_views(X)
        y = check_grids(y, n=len(X), D=self.d_out)
        cfg = self._train_config(X.shape[2], X.shape[3])
        trainer = Trainer(cfg)
        result = trainer.fit(SplitData([str(i) for i in range(len(X))], X.astype(np.float32), y))
        self.model_ = result.model
        self.history_ = result.history
        self.rate_ = self.model_.rate() if self.kind == "implicit" else self.model_.rate(self.n_iter)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self)
        cfg = self.model_.cfg.recon
        X = check_views(X, cfg.height, cfg.width)
        return predict_occupancy(self.model_, X, None if self.kind == "implicit" else self.n_iter)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X) > self.tau

    def score(self, X, y) -> float:
        y = check_grids(y, n=len(X))
        return float(batch_iou(self.predict_proba(X), y, self.tau).mean())
