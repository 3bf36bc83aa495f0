"""Scikit-learn style wrappers around the transductive training loops.

Node classification on a graph is transductive: ``fit`` sees the features of
every node plus the edge list, and learns from the labels of the training
nodes only. ``predict`` reuses the fitted edge list unless a new one is given.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import no_grad
from .data_io import SplitMasks
from .graph import Graph
from .trainer import TrainConfig, train_baseline, train_eagnn

__all__ = ["GNNClassifier", "EAGNNClassifier", "check_graph_inputs"]

_D = TrainConfig


def check_graph_inputs(X, y=None, edges=None, sensitive=None):
    """Validate node features, labels, edges and the sensitive attribute.

    Parameters
    ----------
    X : array-like of shape (n_nodes, n_features)
    y : array-like of shape (n_nodes,), optional
        Binary labels.
    edges : array-like of shape (n_edges, 2), optional
        Integer node ids; self-loops and duplicates are dropped later.
    sensitive : array-like of shape (n_nodes,), optional
        Binary group membership.

    Returns
    -------
    X, y, edges, sensitive : ndarray or None
    """
    X = check_array(X, dtype=np.float64)
    n = X.shape[0]

    def _vec(a, name):
        if a is None:
            return None
        a = check_array(a, ensure_2d=False, dtype=None).reshape(-1)
        if a.shape[0] != n:
            raise ValueError(f"{name} has {a.shape[0]} entries, expected {n}")
        if not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name} must be binary (0/1)")
        return a.astype(np.int64)

    y, sensitive = _vec(y, "y"), _vec(sensitive, "sensitive")
    if edges is not None:
        edges = check_array(edges, dtype=np.int64, ensure_min_samples=0)
        if edges.shape[1] != 2:
            raise ValueError("edges must have shape (n_edges, 2)")
    return X, y, edges, sensitive


class GNNClassifier(ClassifierMixin, BaseEstimator):
    """Plain two-layer GNN node classifier trained with cross-entropy only.

    Parameters
    ----------
    encoder : {"sage_concat", "gcn_mean"}, default="sage_concat"
        Message-passing layer type.
    hidden : int, default=16
        Width of every encoder layer.
    n_layers : int, default=2
        Number of message-passing layers.
    lr_main : float
        Learning rate of the encoder and classifier.
    epochs : int
        Number of full-batch updates.
    optimizer : {"sgd", "adam"}
    momentum : float
        Momentum of the SGD optimiser.
    selection : {"acc", "acc_fair", "fair_percentile", "last"}
        Rule used to pick the returned epoch from validation scores.
    seed : int, default=0
        Seed of parameter initialisation and random draws.

    Attributes
    ----------
    model_ : EagnnModel
        Parameters at the selected epoch.
    history_ : TrainHistory
        Per-epoch loss and validation record.
    classes_ : ndarray of shape (2,)
    """

    _adversarial = False

    def __init__(self, encoder="sage_concat", hidden=16, n_layers=2, lr_main=_D.lr_main,
                 epochs=_D.epochs, optimizer=_D.optimizer, momentum=_D.momentum,
                 selection="acc", seed=0):
        self.encoder = encoder
        self.hidden = hidden
        self.n_layers = n_layers
        self.lr_main = lr_main
        self.epochs = epochs
        self.optimizer = optimizer
        self.momentum = momentum
        self.selection = selection
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        params = self.get_params()
        if not self._adversarial:
            params.update(alpha=0.0, beta=0.0, gamma=0.0, baseline_selection=params.pop("selection"))
        return TrainConfig.from_dict(params)

    def fit(self, X, y, *, edges, sensitive, train_idx=None, val_idx=None):
        """Fit on the labelled nodes of one graph.

        Parameters
        ----------
        X : array-like of shape (n_nodes, n_features)
        y : array-like of shape (n_nodes,)
            Labels; only entries in ``train_idx`` (and ``val_idx``) are used.
        edges : array-like of shape (n_edges, 2)
        sensitive : array-like of shape (n_nodes,)
        train_idx, val_idx : array-like of int, optional
            Training and validation nodes. Both default to all nodes.

        Returns
        -------
        self : object
        """
        X, y, edges, sensitive = check_graph_inputs(X, y, edges, sensitive)
        g = Graph(X, y, sensitive, edges)
        train = np.arange(g.n) if train_idx is None else np.asarray(train_idx, dtype=np.int64)
        val = train if val_idx is None else np.asarray(val_idx, dtype=np.int64)
        masks = SplitMasks(train, val, np.zeros(0, dtype=np.int64))
        fit_fn = train_eagnn if self._adversarial else train_baseline
        self.model_, self.history_ = fit_fn(g, masks, self._train_config())
        self.graph_ = g
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _graph(self, X, edges):
        check_is_fitted(self, "model_")
        X, _, edges, _ = check_graph_inputs(X, edges=edges)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if edges is None:
            if X.shape[0] != self.graph_.n:
                raise ValueError("edges are required when X has a different node count")
            return self.graph_.with_features(X)
        n = X.shape[0]
        zeros = np.zeros(n, dtype=np.int64)
        return Graph(X, zeros, zeros, edges)

    def predict_proba(self, X, edges=None):
        """Class probabilities for every node.

        Returns
        -------
        proba : ndarray of shape (n_nodes, 2)
        """
        g = self._graph(X, edges)
        with no_grad():
            p = self.model_.predict_proba(g).data
        return np.column_stack([1.0 - p, p])

    def predict(self, X, edges=None):
        """Hard labels, thresholding the positive probability at 0.5."""
        return (self.predict_proba(X, edges)[:, 1] >= 0.5).astype(np.int64)


class EAGNNClassifier(GNNClassifier):
    """GNN node classifier trained under the adversarial fairness objective.

    Adds a sufficiency term on feature-similar cross-group nodes and two
    discriminator games that push predictions towards independence from the
    sensitive attribute, unconditionally and given the label.

    Parameters
    ----------
    alpha : float
        Weight of the sufficiency term.
    beta : float
        Weight of the independence penalty.
    gamma : float
        Weight of the separation term.
    lr_disc : float
        Learning rate of the three discriminators.
    disc_steps : int
        Discriminator updates per main update.
    theta : float
        Cosine-similarity threshold of the sufficiency mask.
    selection : str, default="fair_percentile"
        See :class:`GNNClassifier`; the default keeps the most accurate epoch
        among those with the smallest validation fairness gaps.
    **other
        As in :class:`GNNClassifier`.
    """

    _adversarial = True

    def __init__(self, alpha=_D.alpha, beta=_D.beta, gamma=_D.gamma, encoder="sage_concat",
                 hidden=16, n_layers=2, lr_main=_D.lr_main, lr_disc=_D.lr_disc, epochs=_D.epochs,
                 disc_steps=_D.disc_steps, theta=_D.theta, optimizer=_D.optimizer,
                 momentum=_D.momentum, selection=_D.selection, seed=0):
        super().__init__(encoder=encoder, hidden=hidden, n_layers=n_layers, lr_main=lr_main,
                         epochs=epochs, optimizer=optimizer, momentum=momentum,
                         selection=selection, seed=seed)
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lr_disc = lr_disc
        self.disc_steps = disc_steps
        self.theta = theta
