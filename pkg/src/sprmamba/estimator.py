"""scikit-learn style wrapper around model construction and training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import FeatureSequence
from .model import ModelConfig
from .tensor import no_grad
from .training import TrainConfig, train
from .validation import check_labels, check_sequences


class SPRMambaClassifier(ClassifierMixin, BaseEstimator):
    """Frame-wise phase classifier over whole sequences.

    ``X`` is a list of ``[L_i, D]`` feature arrays (one per video) and ``y`` the
    matching list of per-frame label arrays.  Labels may be any sortable
    values; they are encoded to ``0..K-1`` internally via ``classes_``.

    Parameters
    ----------
    stage1_dim, refine_dim, layers_per_stage, stages, window, stride, state_dim,
    expand, dropout, causal, dim_reduction, branches, conv_mode, sampling :
        Architecture settings, see :class:`~sprmamba.model.ModelConfig`.
    base_lr, weight_decay, warmup_epochs, epochs, smoothing_weight, smoothing_clip :
        Optimisation settings, see :class:`~sprmamba.training.TrainConfig`.
    random_state : int
        Seeds initialisation, dropout and the sequence order.
    """

    def __init__(self, stage1_dim=64, refine_dim=32, layers_per_stage=10, stages=4, window=64, stride=64,
                 state_dim=16, expand=2, dropout=0.1, causal=False, dim_reduction=True, branches="full",
                 conv_mode="dilated", sampling="both", base_lr=5e-4, weight_decay=1e-5, warmup_epochs=40,
                 epochs=200, smoothing_weight=0.15, smoothing_clip=4.0, random_state=0):
        self.stage1_dim = stage1_dim
        self.refine_dim = refine_dim
        self.layers_per_stage = layers_per_stage
        self.stages = stages
        self.window = window
        self.stride = stride
        self.state_dim = state_dim
        self.expand = expand
        self.dropout = dropout
        self.causal = causal
        self.dim_reduction = dim_reduction
        self.branches = branches
        self.conv_mode = conv_mode
        self.sampling = sampling
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.epochs = epochs
        self.smoothing_weight = smoothing_weight
        self.smoothing_clip = smoothing_clip
        self.random_state = random_state

    def _configs(self, input_dim: int, num_classes: int) -> tuple[ModelConfig, TrainConfig]:
        model = ModelConfig(input_dim=input_dim, stage1_dim=self.stage1_dim, refine_dim=self.refine_dim,
                            layers_per_stage=self.layers_per_stage, stages=self.stages, num_classes=num_classes,
                            window=self.window, stride=self.stride, state_dim=self.state_dim, expand=self.expand,
                            dropout=self.dropout, causal=self.causal, dim_reduction=self.dim_reduction,
                            branches=self.branches, conv_mode=self.conv_mode, sampling=self.sampling,
                            seed=self.random_state)
        schedule = TrainConfig(base_lr=self.base_lr, weight_decay=self.weight_decay,
                               warmup_epochs=self.warmup_epochs, total_epochs=self.epochs,
                               smoothing_weight=self.smoothing_weight, smoothing_clip=self.smoothing_clip,
                               seed=self.random_state)
        return model, schedule

    def fit(self, X, y):
        sequences = check_sequences(X)
        raw = [np.asarray(v) for v in (y if not (isinstance(y, np.ndarray) and y.ndim == 1) else [y])]
        self.classes_ = np.unique(np.concatenate([r.reshape(-1) for r in raw]))
        encoded = [np.searchsorted(self.classes_, r) for r in raw]
        labels = check_labels(encoded, sequences, len(self.classes_))
        self.n_features_in_ = sequences[0].shape[1]
        model_config, train_config = self._configs(self.n_features_in_, len(self.classes_))
        dataset = [FeatureSequence(f"seq{i}", s, lab) for i, (s, lab) in enumerate(zip(sequences, labels))]
        self.model_, self.history_ = train(dataset, model_config, train_config)
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        """Final-stage class probabilities, one ``[L_i, K]`` array per sequence."""
        check_is_fitted(self, "model_")
        sequences = check_sequences(X, self.n_features_in_)
        self.model_.eval()
        with no_grad():
            return [self.model_(s)[-1].probs.data for s in sequences]

    def predict(self, X) -> list[np.ndarray]:
        return [self.classes_[p.argmax(axis=1)] for p in self.predict_proba(X)]

    def score(self, X, y, sample_weight=None) -> float:
        """Frame accuracy pooled over all sequences, as a fraction."""
        predictions = self.predict(X)
        truth = [np.asarray(v) for v in (y if not (isinstance(y, np.ndarray) and y.ndim == 1) else [y])]
        correct = sum(int(np.sum(p == t)) for p, t in zip(predictions, truth))
        return correct / sum(t.size for t in truth)
