import numpy as np
import pytest

from iblr.errors import ParseError, ShapeError, UnknownDensity
from iblr.linalg import SPDMatrix, min_eigenvalue
from iblr.models import (
    BananaModel,
    BayesLinReg,
    BayesLogReg,
    BetaBinomialModel,
    ConjugateGammaModel,
    CorrelatedLaplaceModel,
    GammaFactorModel,
    QuadraticModel,
    StudentTMixtureModel,
    TOY_DENSITY_NAMES,
    ToyBnnModel,
    centered_quadratic,
    gamma_factor_synthetic,
    load_dataset,
    make_dataset,
    synthetic_classification,
    synthetic_regression,
    toy_density,
)
from iblr.rng import RngStream

from oracles import fd_gradient


def _check_grad(model, zs, rtol=1e-5, atol=1e-7):
    for z in zs:
        z = np.asarray(z, dtype=float)
        grad = model.grad(z)
        fd = fd_gradient(lambda v: model.loss(v), z)
        np.testing.assert_allclose(grad, fd, rtol=rtol, atol=atol)


def _check_hess(model, zs, rtol=1e-4, atol=1e-6):
    for z in zs:
        z = np.asarray(z, dtype=float)
        h = model.hess(z)
        for i in range(z.size):
            def grad_i(v, i=i):
                return model.grad(v)[i]

            fd_row = fd_gradient(grad_i, z)
            np.testing.assert_allclose(h[i], fd_row, rtol=rtol, atol=atol)


class TestQuadratic:
    def test_exact_solution(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        model = QuadraticModel(a, b=np.array([1.0, -1.0]))
        best, l_star = model.exact_solution()
        np.testing.assert_allclose(best.prec.data, a)
        assert model.elbo_exact(best.mu, best.prec) == pytest.approx(l_star)
        # any perturbation is worse
        worse = model.elbo_exact(best.mu + 0.1, best.prec)
        assert worse > l_star

    def test_centered_form(self):
        a = np.diag([1.0, 3.0])
        z_star = np.array([2.0, -1.0])
        model = centered_quadratic(a, z_star)
        assert model.loss(z_star) == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(model.grad(z_star), np.zeros(2), atol=1e-12)


class TestBayesLinReg:
    def test_identity_design_posterior(self):
        x = np.eye(3)
        y = np.zeros(3)
        model = BayesLinReg(make_dataset(x, y), noise_var=1.0, prior_precision=1.0)
        best, l_star = model.exact_solution()
        np.testing.assert_allclose(best.prec.data, 2.0 * np.eye(3))
        np.testing.assert_allclose(best.mu, np.zeros(3))
        assert model.elbo_exact(best.mu, best.prec) - l_star == pytest.approx(0.0, abs=1e-12)

    def test_gap_positive_when_perturbed(self):
        rng = RngStream(81, 0)
        data = synthetic_regression(rng, 40, 3)
        model = BayesLinReg(data, noise_var=0.5, prior_precision=2.0)
        best, l_star = model.exact_solution()
        assert model.elbo_exact(best.mu + 0.05, best.prec) > l_star
        bumped = SPDMatrix(best.prec.data + 0.1 * np.eye(3))
        assert model.elbo_exact(best.mu, bumped) > l_star

    def test_gradients(self):
        rng = RngStream(82, 0)
        data = synthetic_regression(rng, 25, 4)
        model = BayesLinReg(data, noise_var=0.7, prior_precision=1.3)
        zs = [rng.gen.standard_normal(4) for _ in range(5)]
        _check_grad(model, zs)
        _check_hess(model, zs)

    def test_minibatch_unbiased(self):
        rng = RngStream(83, 0)
        data = synthetic_regression(rng, 30, 2)
        model = BayesLinReg(data)
        z = np.array([0.2, -0.4])
        grads = []
        for _ in range(3000):
            batch = model.minibatch(rng, 5)
            grads.append(model.grad(z, batch=batch))
        np.testing.assert_allclose(np.mean(grads, axis=0), model.grad(z), rtol=0.05)


class TestBayesLogReg:
    def test_loss_at_zero(self):
        rng = RngStream(84, 0)
        data = synthetic_classification(rng, 60, 2)
        model = BayesLogReg(data, prior_precision=1.0)
        assert model.loss(np.zeros(2)) == pytest.approx(60 * np.log(2.0), rel=1e-12)

    def test_hessian_floor(self):
        rng = RngStream(85, 0)
        data = synthetic_classification(rng, 40, 3)
        model = BayesLogReg(data, prior_precision=0.7)
        for _ in range(5):
            z = rng.gen.standard_normal(3)
            assert min_eigenvalue(model.hess(z)) >= 0.7 - 1e-9

    def test_gradients(self):
        rng = RngStream(86, 0)
        data = synthetic_classification(rng, 30, 2)
        model = BayesLogReg(data)
        _check_grad(model, [rng.gen.standard_normal(2) for _ in range(5)])

    def test_per_example(self):
        rng = RngStream(87, 0)
        data = synthetic_classification(rng, 20, 2)
        model = BayesLogReg(data, prior_precision=2.0)
        z = np.array([0.3, -0.3])
        per = model.per_example_grads(z, None)
        assert per.shape == (20, 2)
        np.testing.assert_allclose(
            per.sum(axis=0) + 2.0 * z, model.grad(z), atol=1e-10
        )


class TestGammaFactor:
    def test_conjugate_reduction(self):
        rng = RngStream(88, 0)
        model = gamma_factor_synthetic(rng, 1, d=1, k_factors=1, a0=2.0, b0=1.0)
        post, _ = model.exact_solution()
        assert post.shape == pytest.approx(2.0 + model.counts[0])
        assert post.rate == pytest.approx(1.0 + model.w[0, 0])

    def test_gradients_scalar(self):
        rng = RngStream(89, 0)
        model = gamma_factor_synthetic(rng, 1, d=4, k_factors=1)
        for z in [0.4, 1.0, 2.7]:
            fd = (model.loss(np.array([z + 1e-6])) - model.loss(np.array([z - 1e-6]))) / 2e-6
            assert model.grad_many(np.array([z]))[0] == pytest.approx(fd, rel=1e-5)

    def test_gradients_vector(self):
        rng = RngStream(90, 0)
        model = gamma_factor_synthetic(rng, 1, d=5, k_factors=3)
        _check_grad(model, [np.array([0.5, 1.2, 2.0]), np.array([1.0, 1.0, 1.0])], atol=1e-5)
        _check_hess(model, [np.array([0.8, 1.5, 0.6])])

    def test_zero_counts_monotone(self):
        # with no observed counts the loss increases in the latent intensity
        model = GammaFactorModel(np.array([[1.5]]), np.array([0.0]), a0=1.0, b0=1.0)
        hs = np.linspace(0.1, 5.0, 50)
        losses = model.loss_many(hs)
        assert np.all(np.diff(losses) > 0)


class TestToyDensities:
    def test_catalog_names(self):
        for name in TOY_DENSITY_NAMES:
            assert toy_density(name) is not None
        with pytest.raises(UnknownDensity):
            toy_density("nope")

    def test_laplace_kink_convention(self):
        model = CorrelatedLaplaceModel()
        assert model.loss(np.zeros(2)) == pytest.approx(2.0 * np.log(2.0))
        np.testing.assert_allclose(model.grad(np.zeros(2)), np.zeros(2))

    def test_student_t_symmetric_case(self):
        model = StudentTMixtureModel(np.zeros((1, 2)), [np.eye(2)], dof=2.0)
        np.testing.assert_allclose(model.grad(np.zeros(2)), np.zeros(2), atol=1e-12)
        # density symmetric: loss equal at +-z
        z = np.array([0.7, -0.3])
        assert model.loss(z) == pytest.approx(model.loss(-z), rel=1e-12)

    def test_banana_probe_points(self):
        model = BananaModel(curvature=1.0, sigma1=1.0)
        for z in [np.array([0.0, 0.0]), np.array([1.0, -0.5]), np.array([-2.0, 1.0])]:
            direct = 0.5 * z[0] ** 2 + 0.5 * (z[1] + z[0] ** 2 - 1.0) ** 2
            assert model.loss(z) == pytest.approx(direct, rel=1e-12)

    @pytest.mark.parametrize(
        "model",
        [
            BananaModel(),
            ToyBnnModel(),
            BetaBinomialModel.synthetic(),
            StudentTMixtureModel.generate(n_components=3, dim=2, spread=2.0),
        ],
    )
    def test_gradients_fd(self, model):
        rng = RngStream(91, 0)
        zs = [rng.gen.uniform(-1.5, 1.5, size=2) for _ in range(5)]
        _check_grad(model, zs, rtol=2e-5, atol=1e-5)

    def test_double_banana_gradient(self):
        model = toy_density("double_banana")
        rng = RngStream(92, 0)
        zs = [rng.gen.uniform(-1.5, 1.5, size=2) + np.array([0.1, 1.6]) for _ in range(5)]
        _check_grad(model, zs, rtol=2e-5, atol=1e-5)

    @pytest.mark.parametrize("name", ["banana", "toy_bnn", "beta_binomial"])
    def test_grid_mass_refinement(self, name):
        # grid-sum of exp(-loss) stable within 10% under halving the spacing
        model = toy_density(name)
        box = 4.0 if name != "beta_binomial" else 6.0
        sums = []
        for res in (60, 120):
            xs = np.linspace(-box, box, res)
            grid = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
            if name == "beta_binomial":
                grid = grid + np.array([0.0, 1.0])
            vals = np.exp(-model.loss_many(grid) + model.loss_many(np.zeros((1, 2))))
            h = xs[1] - xs[0]
            sums.append(vals.sum() * h * h)
        assert abs(sums[1] - sums[0]) <= 0.1 * abs(sums[0])

    def test_student_t_serialization(self):
        model = StudentTMixtureModel.generate(n_components=2, dim=3, param_seed=5)
        clone = StudentTMixtureModel.from_dict(model.to_dict())
        z = np.array([[0.2, -0.1, 0.4]])
        assert clone.loss_many(z)[0] == pytest.approx(model.loss_many(z)[0], rel=1e-14)

    def test_student_t_truth_sampler_moments(self):
        # dof 2 has no finite covariance; check medians match the mixture of
        # location medians instead
        model = StudentTMixtureModel(np.array([[3.0, 3.0]]), [np.eye(2)], dof=5.0)
        rng = RngStream(93, 0)
        z = model.sample_truth(rng, 100_000)
        np.testing.assert_allclose(z.mean(axis=0), [3.0, 3.0], atol=0.05)

    def test_conjugate_gamma_target(self):
        model = ConjugateGammaModel(3.0, 2.0)
        post, _ = model.exact_solution()
        assert post.shape == 3.0 and post.rate == pytest.approx(2.0)


class TestDatasets:
    def test_csv_with_header(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("a,b,label\n1.0,2.0,1\n3.0,4.0,-1\n5.0,6.0,1\n")
        data = load_dataset(path, fmt="csv", header=True)
        assert data.x.shape == (3, 2)
        np.testing.assert_allclose(data.y, [1.0, -1.0, 1.0])

    def test_csv_parse_error_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n1.0,oops\n")
        with pytest.raises(ParseError) as err:
            load_dataset(path, fmt="csv")
        assert err.value.line == 2

    def test_libsvm_sparse_line(self, tmp_path):
        path = tmp_path / "toy.libsvm"
        path.write_text("-1 3:0.5\n1 1:1.0 2:2.0\n")
        data = load_dataset(path, fmt="libsvm")
        np.testing.assert_allclose(data.x[0], [0.0, 0.0, 0.5])
        np.testing.assert_allclose(data.x[1], [1.0, 2.0, 0.0])

    def test_split_exact_and_disjoint(self, tmp_path):
        rows = "\n".join(f"{i},{i * 2},{1 if i % 2 else -1}" for i in range(351))
        path = tmp_path / "io.csv"
        path.write_text(rows + "\n")
        data = load_dataset(path, fmt="csv", train_size=175)
        assert data.train_idx.size == 175 and data.test_idx.size == 176
        assert np.intersect1d(data.train_idx, data.test_idx).size == 0

    def test_standardize(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("1.0,10.0,0\n2.0,20.0,0\n3.0,30.0,0\n")
        data = load_dataset(path, fmt="csv", standardize=True)
        np.testing.assert_allclose(data.x.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(data.x.std(axis=0), 1.0, atol=1e-12)

    def test_overlapping_split_rejected(self):
        with pytest.raises(ShapeError):
            from iblr.models import Dataset

            Dataset(np.eye(2), np.zeros(2), np.array([0, 1]), np.array([1]))
