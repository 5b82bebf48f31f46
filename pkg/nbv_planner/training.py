"""Mini-batch Adam training with a seeded 80/20 split."""

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from nbv_planner.errors import InvalidArgumentError
from nbv_planner.models import Architecture, TrainConfig
from nbv_planner.net import NetworkParams, Train, init_params, loss_and_grad_sum, predict_batch
from nbv_planner.oracle import Example
from nbv_planner.optim import AdamState, adam_step


class HistoryRow(NamedTuple):
    epoch: int
    train_acc: float
    test_acc: float
    loss: float


def split_indices(n: int, split: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled train/test indices; both sides keep at least one example."""
    order = rng.permutation(n)
    n_train = min(max(int(round(split * n)), 1), n - 1)
    return order[:n_train], order[n_train:]


def accuracy(params: NetworkParams, grids: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict_batch(params, grids) == labels))


def train(
    dataset: Sequence[Example],
    architecture: Architecture,
    cfg: TrainConfig,
    progress: Optional[Callable[[HistoryRow], None]] = None,
    num_classes: int = 14,
    params: Optional[NetworkParams] = None,
) -> tuple[NetworkParams, list[HistoryRow]]:
    """Train and return the parameters with the best test accuracy plus the history.

    Args:
        dataset: Examples with grids of identical shape.
        progress: Called with every history row as soon as the epoch ends.
        params: Starting parameters (default: `init_params` for `architecture`).

    Raises:
        InvalidArgumentError: Fewer than two examples or inconsistent grids.
    """
    if len(dataset) < 2:
        raise InvalidArgumentError(f"training needs at least 2 examples, got {len(dataset)}")
    grids = np.stack([np.asarray(e.grid, dtype=np.float32) for e in dataset])
    labels = np.array([e.label for e in dataset], dtype=np.int64)
    if grids.ndim != 4 or len(set(grids.shape[1:])) != 1:
        raise InvalidArgumentError(f"expected cubic grids, got shape {grids.shape[1:]}")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    train_idx, test_idx = split_indices(len(dataset), cfg.split, rng)
    if params is None:
        params = init_params(
            architecture, cfg.seed, num_classes, grids.shape[1], keep=cfg.keep_prob
        )
    if labels.max() >= params.num_classes:
        raise InvalidArgumentError(
            f"label {labels.max()} does not fit a {params.num_classes}-class network"
        )

    history: list[HistoryRow] = []
    best = params
    best_acc = -1.0
    state = AdamState()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            total_loss = 0.0
            total_grads: Optional[list[np.ndarray]] = None
            # Ordered summation over micro-batches keeps results reproducible
            for micro_no, m_start in enumerate(range(0, len(batch), cfg.micro_batch)):
                micro = batch[m_start : m_start + cfg.micro_batch]
                x = grids[micro][:, None].astype(np.float64)
                mode = Train((cfg.seed, epoch, batch_no, micro_no))
                loss, grads = loss_and_grad_sum(params, x, labels[micro], mode)
                total_loss += loss
                if total_grads is None:
                    total_grads = grads
                else:
                    total_grads = [a + b for a, b in zip(total_grads, grads)]
            assert total_grads is not None
            mean_grads = [g / len(batch) for g in total_grads]
            arrays, state = adam_step(params.arrays(), mean_grads, state, cfg)
            params = params.with_arrays(arrays)
            epoch_loss += total_loss

        row = HistoryRow(
            epoch=epoch,
            train_acc=accuracy(params, grids[train_idx], labels[train_idx]),
            test_acc=accuracy(params, grids[test_idx], labels[test_idx]),
            loss=epoch_loss / len(train_idx),
        )
        history.append(row)
        if progress is not None:
            progress(row)
        if row.test_acc > best_acc:
            best, best_acc = params, row.test_acc
    return best, history
