import numpy as np
import pytest

from protofed import nn


def finite_difference_param_gradient(model, batch, labels, spec, h=1e-4):
    """Central finite differences of the objective over every parameter."""
    grad = np.zeros(model.m)
    base = model.values.copy()
    for i in range(model.m):
        plus, minus = base.copy(), base.copy()
        plus[i] += h
        minus[i] -= h
        up, _ = nn.loss_value(model.with_values(plus), batch, labels, spec)
        down, _ = nn.loss_value(model.with_values(minus), batch, labels, spec)
        grad[i] = (up - down) / (2 * h)
    return grad


def finite_difference_input_gradient(model, x, target, h=1e-4):
    grad = np.zeros_like(x)
    for i in range(x.size):
        plus, minus = x.copy(), x.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (
            nn.embedding_objective(model, plus, target)
            - nn.embedding_objective(model, minus, target)
        ) / (2 * h)
    return grad


def max_gradient_error(analytic, reference, floor=1e-8):
    """Max relative error, falling back to absolute below the floor."""
    analytic = np.asarray(analytic)
    reference = np.asarray(reference)
    err = np.abs(analytic - reference) / np.maximum(np.abs(reference), floor)
    tiny = np.maximum(np.abs(analytic), np.abs(reference)) < floor
    err[tiny] = np.abs(analytic - reference)[tiny]
    return float(err.max()) if err.size else 0.0


def reliable_param_fd(model, batch, labels, spec, h=1e-4):
    """Finite-difference gradient plus a validity flag.

    Central differences are only a trustworthy oracle away from max-pool /
    ReLU kinks; a kink inside the stencil makes the estimate step-size
    dependent. Comparing h against h/2 flags those points without consulting
    the analytic gradient.
    """
    coarse = finite_difference_param_gradient(model, batch, labels, spec, h=h)
    fine = finite_difference_param_gradient(model, batch, labels, spec, h=h / 2)
    return coarse, max_gradient_error(coarse, fine) < 1e-4


@pytest.fixture
def tiny_cnn():
    return nn.build_model(8, 3, seed=5, conv_channels=(3, 4), dense_width=6)
