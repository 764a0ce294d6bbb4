import numpy as np
import pytest

from vismaopt.scenario import default_weights, load_paper_scenario


@pytest.fixture(scope="session")
def scenario1():
    return load_paper_scenario(1)


@pytest.fixture(scope="session")
def scenario2():
    return load_paper_scenario(2)


@pytest.fixture(scope="session")
def weights1():
    return default_weights(1)


@pytest.fixture(scope="session")
def weights2():
    return default_weights(2)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


# published optimal parameter sets (J, k_d, T_d, K_I, E, alpha, beta,
# J+k_d, Sigma, t_final, alpha*(J+k_d), Sigma/beta)
TABLE3 = (
    (5.0895, 1.1857e-4, 0.5029, 1054.56, 108.93, 7.0, 0.027,
     5.090, 0.994, 36.483, 35.627, 36.820),
    (91.479, 2.5800e-4, 0.5917, 1060.97, 35.12, 0.07, 2.7,
     91.480, 0.817, 28.415, 6.4036, 0.3026),
    (5.0692, 1.0071e-4, 0.5163, 975.67, 3624.89, 700.0, 0.027,
     5.069, 1.000, 39.379, 3548.494, 37.026),
    (50.894, 10.1498e-4, 1.2539, 1053.54, 3425.0, 7.0, 2.7e-4,
     50.895, 0.820, 32.913, 356.265, 3036.54),
)

TABLE5 = (
    (11.4986, 1.1595e-4, 0.5035, 2379.26, 59.26, 1.7, 0.045,
     11.499, 0.902, 19.671, 19.548, 20.046),
    (59.3043, 4.2760e-4, 0.9356, 2387.04, 14.99, 0.017, 4.5,
     59.305, 0.887, 13.781, 1.0082, 0.1971),
    (11.4076, 1.0139e-4, 0.5064, 2348.85, 1979.32, 170.0, 0.045,
     11.408, 0.902, 19.967, 1939.309, 20.040),
    (16.8974, 13.2759e-4, 0.6524, 2382.76, 2039.5, 1.7, 4.5e-4,
     16.899, 0.896, 19.076, 28.728, 1991.7),
)

# one printed-precision ulp of the E column, per row
TABLE3_E_ULP = (0.01, 0.01, 0.01, 1.0)
TABLE5_E_ULP = (0.01, 0.01, 0.01, 0.1)
