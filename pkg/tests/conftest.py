import pytest

from parisi_lab.mixtures import CouplingSpec, MixtureSpec, sk

# Example mixtures used across the suite: a cubic perturbation of the
# quadratic model (c = 3 g3/g2 = 0.6 < 1) and a cross mixture that keeps the
# quadratic part and halves the cubic one.
EX1 = MixtureSpec({2: 0.36, 3: 0.072})
EX2_CROSS = MixtureSpec({2: 0.36, 3: 0.036})


@pytest.fixture
def ex1():
    return EX1


@pytest.fixture
def ex2_coupling():
    return CouplingSpec(EX1, EX2_CROSS, 0.3, 0.0)


@pytest.fixture
def sk_coupling():
    xi = sk(1.2)
    return CouplingSpec(xi, xi, 0.4, 0.0)
