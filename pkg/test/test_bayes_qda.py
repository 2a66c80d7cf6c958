import math

import numpy as np
import parametrize_from_file
import pytest
from scipy.integrate import trapezoid
from scipy.stats import invwishart, multivariate_normal

from bayes_qda import (
    BayesQdaModel,
    GaussianClassParams,
    LdaModel,
    NIWParams,
    QdaMleModel,
    StudentTParams,
    class_posterior,
    class_predictives,
    default_prior,
    ensemble_predictive,
    lda_decide,
    lda_fit,
    log_likelihood,
    meta_fit_prior,
    niw_update,
    posterior_predictive,
    qda_decide,
    qda_discriminants,
    qda_fit_mle,
    t_logpdf,
)
from metrics_stream import MetricsStream
from tasking import sample_episode, standardized_accuracy
from ubmf_exceptions import (
    InvalidDof,
    InvalidInput,
    InvalidPrior,
    SingularCovariance,
    TrainingFailure,
)


def student_t(loc: list, scale: list, dof: float) -> StudentTParams:
    return StudentTParams(np.array(loc, dtype=float), np.array(scale, dtype=float), float(dof))


def test_qda_fit_mle():
    fitted = qda_fit_mle({0: np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])})
    assert np.allclose(fitted[0].mu, [1.0, 1.0])
    assert np.allclose(fitted[0].sigma, np.eye(2))
    assert fitted[0].prior_weight == 1.0


def test_qda_fit_mle_translation():
    x = np.random.default_rng(0).standard_normal((10, 3))
    shift = np.array([5.0, -1.0, 2.0])
    plain = qda_fit_mle({0: x})[0]
    moved = qda_fit_mle({0: x + shift})[0]
    assert np.allclose(moved.mu, plain.mu + shift)
    assert np.allclose(moved.sigma, plain.sigma)


@parametrize_from_file
def test_qda_fit_mle_singular(points: list):
    with pytest.raises(SingularCovariance):
        qda_fit_mle({0: np.array(points, dtype=float)})


def test_qda_fit_mle_shrinkage_single_shot():
    fitted = qda_fit_mle({0: np.array([[0.0, 0.0]]), 1: np.array([[1.0, 0.0], [3.0, 2.0]])}, shrinkage=0.5)
    assert fitted[0].sigma.shape == (2, 2)
    assert np.all(np.linalg.eigvalsh(fitted[0].sigma) > 0)


@parametrize_from_file
def test_qda_decide(x: list, weights: list, expect: int):
    classes = [
        GaussianClassParams(np.array([0.0, 0.0]), np.eye(2), weights[0], 1),
        GaussianClassParams(np.array([4.0, 0.0]), np.eye(2), weights[1], 2),
    ]
    assert qda_decide(np.array(x), classes) == expect


def test_qda_discriminants_textbook():
    classes = [
        GaussianClassParams(np.array([0.0]), np.array([[1.0]]), 0.5, 0),
        GaussianClassParams(np.array([0.0]), np.array([[4.0]]), 0.5, 1),
    ]
    verbatim = qda_discriminants(np.array([3.0]), classes)
    textbook = qda_discriminants(np.array([3.0]), classes, textbook=True)
    assert textbook[0, 1] == pytest.approx(verbatim[0, 1] - 0.5 * math.log(4.0))
    assert qda_decide(np.array([[3.0], [0.1]]), classes).tolist() == [1, 1]
    assert qda_decide(np.array([[3.0], [0.1]]), classes, textbook=True).tolist() == [1, 0]


def test_niw_update_no_data(prior_2d):
    assert niw_update(prior_2d, np.zeros((0, 2))) is prior_2d


def test_niw_update_one_point(prior_2d):
    x = np.array([2.0, -4.0])
    posterior = niw_update(prior_2d, [x])
    assert np.allclose(posterior.eta, x / 2)
    assert posterior.lam == 2.0
    assert posterior.nu == 3.0
    assert np.allclose(posterior.psi, np.eye(2) + 0.5 * np.outer(x, x))


def test_niw_update_sequential_equals_batch():
    prior = NIWParams(np.array([0.5, -0.2, 1.0]), 0.7, np.diag([1.0, 2.0, 0.5]), 4.5)
    data = np.random.default_rng(3).standard_normal((9, 3))
    sequential = prior
    for x in data:
        sequential = niw_update(sequential, [x])
    batch = niw_update(prior, data)
    assert np.allclose(sequential.eta, batch.eta, atol=1e-9)
    assert np.allclose(sequential.psi, batch.psi, atol=1e-9)
    assert sequential.lam == pytest.approx(batch.lam)
    assert sequential.nu == pytest.approx(batch.nu)
    shuffled = niw_update(prior, data[::-1])
    assert np.allclose(shuffled.psi, batch.psi, atol=1e-12)


def test_niw_update_rejects_non_finite(prior_2d):
    with pytest.raises(InvalidInput):
        niw_update(prior_2d, [[np.nan, 0.0]])


def test_posterior_predictive(prior_2d):
    t = posterior_predictive(prior_2d)
    assert np.allclose(t.loc, 0.0)
    assert np.allclose(t.scale, 2.0 * np.eye(2))
    assert t.dof == 1.0
    with pytest.raises(InvalidDof):
        posterior_predictive(NIWParams(np.zeros(2), 1.0, np.eye(2), 0.5))


def test_posterior_predictive_consistency():
    data = np.random.default_rng(4).normal(3.0, 2.0, size=(10000, 1))
    t = posterior_predictive(niw_update(default_prior(1), data))
    assert abs(t.loc[0] - data.mean()) < 3 * 2.0 / math.sqrt(10000)


@pytest.mark.slow
def test_posterior_predictive_matches_monte_carlo():
    rng = np.random.default_rng(12)
    prior = NIWParams(np.array([0.5, -0.5]), 1.5, np.array([[1.2, 0.3], [0.3, 0.8]]), 4.0)
    posterior = niw_update(prior, rng.standard_normal((5, 2)) + [1.0, 0.0])
    t = posterior_predictive(posterior)
    n = 1_000_000
    # Sigma ~ IW(nu_n, Psi_n), then mu ~ N(eta_n, Sigma / lambda_n)
    sigmas = invwishart.rvs(df=posterior.nu, scale=posterior.psi, size=n, random_state=rng)
    white = rng.standard_normal((n, 2))
    mus = posterior.eta + np.einsum("nij,nj->ni", np.linalg.cholesky(sigmas / posterior.lam), white)
    precisions = np.linalg.inv(sigmas)
    log_norm = -math.log(2.0 * math.pi) - 0.5 * np.linalg.slogdet(sigmas)[1]
    points = t.loc + rng.standard_normal((10, 2)) @ np.linalg.cholesky(t.scale).T
    for x in points:
        diff = x - mus
        maha = np.einsum("ni,nij,nj->n", diff, precisions, diff)
        marginal = float(np.mean(np.exp(log_norm - 0.5 * maha)))
        assert math.exp(t_logpdf(x, t)) == pytest.approx(marginal, rel=0.02)


@parametrize_from_file
def test_t_logpdf(x: list, loc: list, scale: list, dof: float, expect: float):
    assert t_logpdf(np.array(x), student_t(loc, scale, dof)) == pytest.approx(expect, abs=1e-4)


def test_t_logpdf_large_dof_is_gaussian():
    scale = np.array([[2.0, 0.3], [0.3, 1.0]])
    t = StudentTParams(np.array([1.0, -1.0]), scale, 1e6)
    x = np.array([0.2, 0.4])
    assert t_logpdf(x, t) == pytest.approx(multivariate_normal.logpdf(x, [1.0, -1.0], scale), abs=1e-3)


def test_t_logpdf_integrates_to_one():
    grid = np.linspace(-2000.0, 2000.0, 2000001)
    t = student_t([0.5], [[1.5]], 3.0)
    density = np.exp(t_logpdf(grid[:, None], t))
    assert trapezoid(density, grid) == pytest.approx(1.0, abs=1e-4)


def test_class_posterior():
    same = student_t([0.0], [[1.0]], 3.0)
    assert np.allclose(class_posterior(np.array([0.7]), [same, same, same]), 1 / 3)
    assert class_posterior(np.array([0.7]), [same]).tolist() == [1.0]
    other = student_t([1.0], [[2.0]], 5.0)
    probabilities = class_posterior(np.array([0.0]), [same, other])
    a = math.exp(t_logpdf(np.array([0.0]), same))
    b = math.exp(t_logpdf(np.array([0.0]), other))
    assert probabilities[0] / probabilities[1] == pytest.approx(a / b, rel=1e-9)
    shifted = class_posterior(np.array([0.0]), [same, other], log_weights=np.array([3.0, 3.0]))
    assert np.allclose(shifted, probabilities)


def test_log_likelihood_properties(prior_2d):
    rng = np.random.default_rng(5)
    query = {0: rng.standard_normal((5, 2)), 1: rng.standard_normal((4, 2)) + 2.0}
    support = {0: rng.standard_normal((3, 2)), 1: rng.standard_normal((2, 2)) + 2.0}
    total = log_likelihood(prior_2d, query, support)
    parts = sum(log_likelihood(prior_2d, {c: query[c]}, {c: support[c]}) for c in query)
    assert total == pytest.approx(parts)
    reordered = {c: points[::-1] for c, points in query.items()}
    assert log_likelihood(prior_2d, reordered, support) == pytest.approx(total)
    outlier = {0: np.vstack([query[0], [[60.0, -60.0]]]), 1: query[1]}
    assert log_likelihood(prior_2d, outlier, support) < total


def test_log_likelihood_invalid_prior():
    with pytest.raises(InvalidPrior):
        log_likelihood(NIWParams(np.zeros(2), -1.0, np.eye(2), 2.0), {0: np.zeros((1, 2))})


def test_single_shot_predictive_is_proper():
    d = 16
    rng = np.random.default_rng(6)
    support = {0: rng.standard_normal((1, d)), 1: rng.standard_normal((1, d)) + 1.0}
    with pytest.raises(SingularCovariance):
        qda_fit_mle(support)
    phi = default_prior(d)
    assert np.isfinite(log_likelihood(phi, {0: rng.standard_normal((3, d))}, support))


def test_prior_dict_round_trip():
    phi = NIWParams(np.array([1.0, 2.0]), 0.5, np.array([[2.0, 0.4], [0.4, 1.0]]), 3.5)
    loaded = NIWParams.from_dict(phi.to_dict())
    assert np.allclose(loaded.psi, phi.psi)
    assert np.allclose(loaded.eta, phi.eta)
    assert loaded.lam == phi.lam
    with pytest.raises(InvalidPrior):
        NIWParams.from_dict({"d": 2})


@parametrize_from_file
def test_prior_validation(eta: list, lam: float, psi: list, nu: float):
    with pytest.raises(InvalidPrior):
        NIWParams(np.array(eta, dtype=float), lam, np.array(psi, dtype=float), nu).validate()


def gaussian_family_tasks(rng: np.random.Generator, center: np.ndarray, n_tasks: int) -> list:
    tasks = []
    for _ in range(n_tasks):
        support, query = {}, {}
        for c in range(2):
            mean = center + 0.5 * rng.standard_normal(center.shape[0])
            support[c] = mean + 0.3 * rng.standard_normal((1, center.shape[0]))
            query[c] = mean + 0.3 * rng.standard_normal((5, center.shape[0]))
        tasks.append((support, query))
    return tasks


def test_meta_fit_prior_no_tasks(prior_2d):
    assert meta_fit_prior([], prior_2d) is prior_2d


def test_meta_fit_prior_learns_family():
    rng = np.random.default_rng(8)
    center = np.array([1.0, -1.0, 0.5, 2.0])
    stream = MetricsStream()
    phi = meta_fit_prior(
        gaussian_family_tasks(rng, center, 500), default_prior(4), lr=0.05, iterations=3000, stream=stream
    )
    assert np.max(np.abs(phi.eta - center)) < 0.2
    losses = stream.values("query_nll")
    tenth = len(losses) // 10
    assert np.mean(losses[-tenth:]) < np.mean(losses[:tenth])


def test_meta_fit_prior_divergence(prior_2d):
    tasks = [({0: np.zeros((1, 2))}, {0: np.array([[np.inf, 0.0]])})]
    with pytest.raises(TrainingFailure) as failure:
        meta_fit_prior(tasks, prior_2d, iterations=3)
    assert failure.value.last_good is not None


def test_ensemble_predictive(prior_2d):
    rng = np.random.default_rng(9)
    support = {0: rng.standard_normal((4, 2)), 1: rng.standard_normal((4, 2)) + 3.0}
    members = ensemble_predictive(prior_2d, support, rng.standard_normal((5, 2)), rng, samples=8)
    assert members.shape == (8, 5, 2)
    assert np.allclose(members.sum(axis=2), 1.0)


def test_episode_models(signals, encoder):
    episode = sample_episode(signals, 3, np.random.default_rng(1), query_size=6)
    probabilities = BayesQdaModel(encoder, default_prior(4)).predict_proba(episode)
    assert probabilities.shape == (len(episode.query), episode.way())
    assert np.allclose(probabilities.sum(axis=1), 1.0)
    for model in (QdaMleModel(encoder, shrinkage=0.5), LdaModel(encoder)):
        assert set(model.predict(episode).tolist()) <= set(episode.classes)


def test_lda_fit():
    rng = np.random.default_rng(4)
    features = {3: rng.standard_normal((10, 2)), 7: rng.standard_normal((10, 2)) + [6.0, 0.0]}
    model = lda_fit(features)
    assert lda_decide(model, np.array([-0.5, 0.2])) == 3
    assert lda_decide(model, np.array([6.5, -0.1])) == 7
    assert lda_decide(model, np.array([[0.0, 0.0], [6.0, 0.0]])).tolist() == [3, 7]


def test_bayesian_predictive_where_mle_is_singular():
    d, shots, way = 16, 3, 5
    rng = np.random.default_rng(14)
    scores = []
    for _ in range(20):
        means = 3.0 * rng.standard_normal((way, d))
        support = {c: means[c] + rng.standard_normal((shots, d)) for c in range(way)}
        query = np.concatenate([means[c] + rng.standard_normal((10, d)) for c in range(way)])
        with pytest.raises(SingularCovariance):
            qda_fit_mle(support)
        probabilities = class_posterior(query, class_predictives(default_prior(d), support))
        assert np.all(np.isfinite(probabilities))
        accuracy = float(np.mean(np.argmax(probabilities, axis=1) == np.repeat(np.arange(way), 10)))
        scores.append(standardized_accuracy(accuracy, way))
    assert np.mean(scores) >= 0.70
