import numpy as np
import pytest

from splitseg.boundary import gt_split_boundary
from splitseg.edt import edt_exact
from splitseg.errors import InvalidConfig, MissingMask
from splitseg.fields import LabelField3D, LogitField
from splitseg.losses import BoundaryLossConfig, make_combined_loss_fn, make_overlap_loss_fn
from splitseg.metrics import dice_score, summarize
from splitseg.phantom import make_dataset
from splitseg.pipeline import (
    predict_split_within_mask,
    FeatureExtractorConfig,
    TrainConfig,
    _forward_backward,
    extract_features,
    gaussian_kernel,
    gaussian_smooth,
    predict_labels,
    run_baseline,
    run_two_stage,
    train,
)

DIMS = (20, 20, 14)


@pytest.fixture(scope="module")
def small_sets():
    train_set, _, test_set = make_dataset(42, 4, 1, 3, dims=DIMS)
    return train_set, test_set


def small_cfg(**kw):
    defaults = dict(stage="stage2", iterations=20, seed=0, learning_rate=0.3)
    defaults.update(kw)
    return TrainConfig(**defaults)


# --- features -----------------------------------------------------------------


def test_constant_image_gives_zero_features(small_sets):
    train_set, _ = small_sets
    case = train_set[0]
    flat_image = type(case.image)(np.full(DIMS, 3.3), case.image.spacing)
    flat_case = type(case)(case.case_id, flat_image, case.labels, case.whole_tumour, case.spec)
    cfg = FeatureExtractorConfig(include_coords=False)
    feats = extract_features(flat_case, None, cfg)
    assert feats.shape == (3, *DIMS)  # raw + two smoothing scales
    assert (feats == 0.0).all()


def test_delta_spike_smoothing_matches_dense_oracle():
    rng = np.random.default_rng(5)
    arr = np.zeros((11, 11, 11))
    arr[5, 5, 5] = 1.0
    arr += 0.1 * rng.standard_normal(arr.shape)
    sigma = 1.0
    got = gaussian_smooth(arr, sigma)
    # dense oracle: reflect-pad then full 3-D kernel sum at every voxel
    k = gaussian_kernel(sigma)
    r = (k.size - 1) // 2
    dense_kernel = k[:, None, None] * k[None, :, None] * k[None, None, :]
    padded = np.pad(arr, r, mode="reflect")
    expected = np.zeros_like(arr)
    for x in range(arr.shape[0]):
        for y in range(arr.shape[1]):
            for z in range(arr.shape[2]):
                block = padded[x : x + k.size, y : y + k.size, z : z + k.size]
                expected[x, y, z] = (block * dense_kernel).sum()
    assert np.abs(got - expected).max() < 1e-9


def test_mask_channel_toggles_feature_count(small_sets):
    train_set, _ = small_sets
    case = train_set[0]
    without = extract_features(case, None, FeatureExtractorConfig(include_mask=False))
    with_mask = extract_features(
        case, case.whole_tumour, FeatureExtractorConfig(include_mask=True)
    )
    assert with_mask.shape[0] == without.shape[0] + 1


def test_missing_mask_raises(small_sets):
    train_set, _ = small_sets
    with pytest.raises(MissingMask):
        extract_features(train_set[0], None, FeatureExtractorConfig(include_mask=True))


def test_feature_config_requires_a_feature():
    with pytest.raises(InvalidConfig):
        FeatureExtractorConfig(
            smoothing_sigmas=(), include_intensity=False, include_coords=False,
            include_mask=False,
        )


# --- training ------------------------------------------------------------------


def test_parameter_gradient_matches_finite_differences():
    train_set, _, _ = make_dataset(7, 1, 1, 1, dims=(4, 4, 4))
    case = train_set[0]
    fcfg = FeatureExtractorConfig(include_mask=True)
    feats = extract_features(case, case.whole_tumour, fcfg)
    phi = edt_exact(gt_split_boundary(case.labels))
    loss_fn = make_combined_loss_fn(
        case.labels, phi, BoundaryLossConfig(tau=4.0, epsilon=1e-8, gamma=0.5)
    )
    rng = np.random.default_rng(0)
    weights = 0.1 * rng.standard_normal((3, fcfg.num_features))
    bias = 0.1 * rng.standard_normal(3)
    _, grad_w, grad_b = _forward_backward(
        weights, bias, feats, loss_fn, case.labels.dims, case.image.spacing
    )

    def loss_at(w, b):
        value, _, _ = _forward_backward(w, b, feats, loss_fn, case.labels.dims,
                                        case.image.spacing)
        return value

    h = 1e-5
    worst = 0.0
    for idx in np.ndindex(weights.shape):
        w_plus = weights.copy()
        w_plus[idx] += h
        w_minus = weights.copy()
        w_minus[idx] -= h
        numeric = (loss_at(w_plus, bias) - loss_at(w_minus, bias)) / (2 * h)
        worst = max(worst, abs(numeric - grad_w[idx]) / max(abs(numeric), abs(grad_w[idx]), 1e-8))
    for i in range(3):
        b_plus = bias.copy()
        b_plus[i] += h
        b_minus = bias.copy()
        b_minus[i] -= h
        numeric = (loss_at(weights, b_plus) - loss_at(weights, b_minus)) / (2 * h)
        worst = max(worst, abs(numeric - grad_b[i]) / max(abs(numeric), abs(grad_b[i]), 1e-8))
    assert worst < 1e-4


def test_training_deterministic(small_sets):
    train_set, _ = small_sets
    cfg = small_cfg(gamma=0.5, iterations=10)
    m1, c1 = train(train_set, cfg)
    m2, c2 = train(train_set, cfg)
    assert np.array_equal(m1.weights, m2.weights)
    assert np.array_equal(m1.bias, m2.bias)
    assert c1 == c2


def test_gamma_zero_matches_boundary_term_removed(small_sets):
    """gamma = 0 must be bitwise identical to never computing the boundary term."""
    train_set, _ = small_sets
    cfg = small_cfg(gamma=0.0, iterations=10)
    model_a, curve_a = train(train_set, cfg)

    # manual loop with the boundary term removed entirely
    fcfg = cfg.resolved_features()
    prepared = []
    for case in train_set:
        feats = extract_features(case, case.whole_tumour, fcfg)
        loss_fn = make_overlap_loss_fn(case.labels, 3, cfg.class_weights)
        prepared.append((feats, loss_fn, case.labels.dims, case.image.spacing))
    rng = np.random.default_rng(cfg.seed)
    weights = 0.01 * rng.standard_normal((3, fcfg.num_features))
    bias = np.zeros(3)
    curve_b = []
    for _ in range(cfg.iterations):
        total = 0.0
        grad_w = np.zeros_like(weights)
        grad_b = np.zeros_like(bias)
        for feats, loss_fn, dims, spacing in prepared:
            value, gw, gb = _forward_backward(weights, bias, feats, loss_fn, dims, spacing)
            total += value
            grad_w += gw
            grad_b += gb
        curve_b.append(total / len(prepared))
        weights = weights - cfg.learning_rate * grad_w / len(prepared)
        bias = bias - cfg.learning_rate * grad_b / len(prepared)

    assert np.array_equal(model_a.weights, weights)
    assert np.array_equal(model_a.bias, bias)
    assert curve_a == curve_b


def test_single_case_whole_tumour_fit():
    # wall intensity equal to tumour level plus a short canal makes the
    # whole-tumour task essentially linearly separable from raw intensity;
    # the only confusable voxels are the thin wall collar around a
    # 2.5-voxel canal stub
    from splitseg.phantom import PhantomSpec, generate

    spec = PhantomSpec(seed=3, dims=(32, 32, 24), plane_point=(16.0, 16.0, 12.0),
                       canal_radius=2.2, canal_length=2.5, bulb_semi_axes=(9.0, 9.0, 8.0),
                       bulb_offset=4.0, intensity=(0.30, 0.85, 0.85), noise_sigma=0.01)
    case = generate(spec, "separable")
    cfg = TrainConfig(stage="stage1", iterations=200, learning_rate=0.5, seed=0)
    model, curve = train([case], cfg)
    pred = predict_labels(model, case)
    assert dice_score(pred, case.whole_tumour, 1) > 0.95
    assert curve[-1] < curve[0]


def test_loss_curve_smoothed_non_increasing(small_sets):
    train_set, _ = small_sets
    _, curve = train(train_set, small_cfg(gamma=0.5, iterations=60, learning_rate=0.2))
    window = 10
    smoothed = np.convolve(curve, np.ones(window) / window, mode="valid")
    assert (np.diff(smoothed) <= 1e-9).all()


def test_empty_training_set_rejected():
    with pytest.raises(InvalidConfig):
        train([], small_cfg())


# --- cascade and baseline ---------------------------------------------------------


def test_cascade_containment_and_wt_equality(small_sets):
    train_set, test_set = small_sets
    cfg = small_cfg(iterations=30)
    stage1_model, _ = train(train_set, TrainConfig(stage="stage1", iterations=30,
                                                   learning_rate=0.3, seed=0))
    stage2_model, _ = train(train_set, cfg)
    for case in test_set:
        mask = predict_labels(stage1_model, case)
        predicted = predict_split_within_mask(stage2_model, case, mask)
        # tumour-class predictions are a subset of the stage-1 mask, and the
        # cascade's whole tumour equals the stage-1 mask exactly
        assert ((predicted.data != 0) == (mask.data != 0)).all()
        wt_pred = LabelField3D((predicted.data != 0).astype(np.int64), 2,
                               spacing=predicted.spacing)
        assert dice_score(wt_pred, case.whole_tumour, 1) == dice_score(
            mask, case.whole_tumour, 1
        )


def test_two_stage_reports_structure(small_sets):
    train_set, test_set = small_sets
    reports = run_two_stage(train_set, test_set, small_cfg(iterations=25))
    assert len(reports) == len(test_set)
    for r in reports:
        assert set(r.dice_per_class) == {0, 1, 2}
        assert 0.0 <= r.dice_wt <= 1.0
        assert r.stage == "stage2"


def test_ground_truth_masks_do_not_hurt(small_sets):
    train_set, test_set = small_sets
    cfg = small_cfg(iterations=40)
    stage1_model, _ = train(train_set, TrainConfig(stage="stage1", iterations=40,
                                                   learning_rate=0.3, seed=0))
    predicted = run_two_stage(train_set, test_set, cfg, stage1_model=stage1_model)
    oracle = run_two_stage(
        train_set, test_set, cfg, test_mask_source="ground_truth", stage1_model=stage1_model
    )

    def med(reports):
        values = [r.assd_mm for r in reports]
        finite = [v for v in values if np.isfinite(v)]
        return np.median(finite) if finite else np.inf

    assert med(oracle) <= med(predicted) + 1e-12


def test_baseline_has_no_mask_feature(small_sets):
    train_set, test_set = small_sets
    cfg = small_cfg(stage="direct", iterations=20)
    model, _ = train(train_set, cfg)
    assert not model.features.include_mask
    reports = run_baseline(train_set, test_set, cfg)
    assert len(reports) == len(test_set)
    assert all(r.stage == "direct" for r in reports)


def test_invalid_stage_rejected():
    with pytest.raises(InvalidConfig):
        TrainConfig(stage="stage3")


def test_stage1_model_type_checked(small_sets):
    train_set, test_set = small_sets
    stage2_model, _ = train(train_set, small_cfg(iterations=5))
    with pytest.raises(InvalidConfig):
        run_two_stage(train_set, test_set, small_cfg(iterations=5), stage1_model=stage2_model)
