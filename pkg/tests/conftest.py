import numpy as np
import pytest

from learning.cluster import BankProvenance, FilterBank
from quantum.ansatz import bind_params, bind_random, catalogue_templates, make_template


def random_bank(n_qubits: int, K: int, seed: int, level: int = 1) -> FilterBank:
    """K random filters cycling through the catalogue."""
    templates = catalogue_templates()
    filters = tuple(
        bind_random(make_template(templates[k % len(templates)].template_id, n_qubits, 1 + k % 2), seed + k)
        for k in range(K)
    )
    return FilterBank(level, filters, tuple(range(K)), BankProvenance(seed, K, None, seed))


def identity_filter(n_qubits: int):
    template = make_template("ry_only", n_qubits, 1)
    return bind_params(template, np.zeros(len(template.param_slots)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
