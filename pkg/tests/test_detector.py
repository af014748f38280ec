import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projlab import detector, scene
from projlab.container import ContainerError
from projlab.detector import Detection, best_confidence, logistic, stereo_confidence
from projlab.rng import RngStream


@pytest.fixture(scope="module")
def det():
    return detector.TemplateDetector()


@pytest.fixture(scope="module")
def car_model():
    return detector.build_template_model(classes=("car",))


def brute_ncc(img, tpl):
    """Direct joint-RGB NCC at every valid offset."""
    th, tw = tpl.shape[:2]
    h, w = img.shape[:2]
    t = tpl - tpl.mean()
    tn = np.sqrt(np.sum(t * t))
    out = np.zeros((h - th + 1, w - tw + 1))
    for y in range(out.shape[0]):
        for x in range(out.shape[1]):
            win = img[y : y + th, x : x + tw]
            wz = win - win.mean()
            wn = np.sqrt(np.sum(wz * wz))
            out[y, x] = 0.0 if wn < 1e-9 or tn == 0 else np.sum(wz * t) / (wn * tn)
    return out


# -- confidence helpers ------------------------------------------------------------


def test_logistic_values():
    assert logistic(0.0) == 0.5
    assert logistic(np.log(3.0)) == pytest.approx(0.75)
    assert 0.0 <= logistic(-1000.0) <= logistic(1000.0) <= 1.0


def test_detection_validates_confidence():
    with pytest.raises(detector.DetectorError):
        Detection("car", (0, 0, 1, 1), 1.5)


def test_best_confidence_examples():
    assert best_confidence([], "car") == 0.0
    dets = [Detection("car", (0, 0, 1, 1), 0.2), Detection("car", (0, 0, 1, 1), 0.9)]
    assert best_confidence(dets, "car") == 0.9
    assert best_confidence([Detection("cup", (0, 0, 1, 1), 0.8)], "car") == 0.0


@pytest.mark.parametrize("left, right, expect", [(0.3, 0.7, 0.7), (None, None, 0.0), (0.59, 0.41, 0.59)])
def test_stereo_confidence_examples(left, right, expect):
    lens = lambda c: [] if c is None else [Detection("car", (0, 0, 1, 1), c)]  # noqa: E731
    assert stereo_confidence(lens(left), lens(right), "car") == expect


@given(st.lists(st.floats(0, 1), max_size=4), st.lists(st.floats(0, 1), max_size=4))
def test_stereo_dominates_each_lens(lc, rc):
    left = [Detection("car", (0, 0, 1, 1), c) for c in lc]
    right = [Detection("car", (0, 0, 1, 1), c) for c in rc]
    s = stereo_confidence(left, right, "car")
    assert s >= best_confidence(left, "car") and s >= best_confidence(right, "car")


# -- template detector -------------------------------------------------------------


def test_fft_ncc_matches_brute_force(car_model):
    d = detector.TemplateDetector(car_model)
    rng = np.random.default_rng(0)
    tpl = car_model.templates["car"][4]
    img = rng.uniform(size=(tpl.shape[0] + 5, tpl.shape[1] + 7, 3))
    img[2 : 2 + tpl.shape[0], 3 : 3 + tpl.shape[1]] = tpl
    assert np.allclose(d.ncc_map(img, "car", 4), brute_ncc(img, tpl), atol=1e-9)


def test_exact_template_scores_maximum(car_model):
    d = detector.TemplateDetector(car_model)
    tpl = car_model.templates["car"][2]
    for alpha in (1.0, 0.5):
        (dets,) = [detector.detect_template(tpl * alpha, car_model)]
        assert dets[0].confidence == pytest.approx(float(logistic(car_model.slope + car_model.offset)))
        assert d.best_match(tpl * alpha, "car")[0] == pytest.approx(1.0)


def test_constant_image_scores_logistic_offset(car_model):
    img = np.full((96, 128, 3), 0.4)
    (d,) = detector.detect_template(img, car_model)
    assert d.confidence == pytest.approx(float(logistic(car_model.offset)))
    # The experiment-facing detector treats that as "not detected".
    assert detector.TemplateDetector(car_model).confidence(img, "car") == 0.0


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 1.5), st.floats(-0.1, 0.1))
def test_ncc_invariant_to_affine_brightness(alpha, beta):
    model = detector.build_template_model(classes=("cup",))
    d = detector.TemplateDetector(model)
    img = scene.render_clean(scene.SceneConfig(object_id="cup", ambient_lux=200))
    # Keep the transformed image unclamped so the property is exact.
    img = 0.05 + 0.4 * img
    s0, b0 = d.best_match(img, "cup")
    s1, b1 = d.best_match(alpha * img + beta + 0.2, "cup")
    assert s1 == pytest.approx(s0, abs=1e-9) and b1 == b0


def test_image_smaller_than_template(car_model):
    with pytest.raises(detector.ImageSmallerThanTemplate):
        detector.TemplateDetector(car_model).best_match(np.zeros((4, 4, 3)), "car")


def test_detect_is_deterministic(det):
    img = scene.render_clean(scene.SceneConfig(object_id="stop_sign", distance_m=1.0))
    assert det.detect(img) == det.detect(img)


def test_clean_car_half_metre_is_confident(det):
    conf = det.confidence(scene.render_clean(scene.SceneConfig(object_id="car", distance_m=0.5)), "car")
    assert conf >= 0.9


@pytest.mark.parametrize(
    "obj, dist", [("car", 1.0), ("stop_sign", 1.0), ("potted_plant", 0.6), ("cup", 0.5)]
)
def test_calibrated_suite_confidence_near_095(det, obj, dist):
    conf = det.confidence(scene.render_clean(scene.SceneConfig(object_id=obj, distance_m=dist)), obj)
    assert 0.85 <= conf <= 0.99


def test_bbox_covers_object(det):
    cfg = scene.SceneConfig(object_id="car", distance_m=0.5)
    dets = {d.label: d for d in det.detect(scene.render_clean(cfg))}
    x0, y0, x1, y1 = dets["car"].bbox
    ox0, oy0, ox1, oy1 = scene.object_bbox(cfg)
    overlap = max(0, min(x1, ox1) - max(x0, ox0)) * max(0, min(y1, oy1) - max(y0, oy0))
    union = (x1 - x0) * (y1 - y0) + (ox1 - ox0) * (oy1 - oy0) - overlap
    assert overlap / union > 0.6


def test_pyramid_is_half_octave(car_model):
    widths = [t.shape[1] for t in car_model.templates["car"][: detector.PYRAMID_LEVELS]]
    ratios = np.array(widths[1:]) / np.array(widths[:-1])
    assert np.allclose(ratios, 2**-0.5, atol=0.05)


def test_model_validation():
    with pytest.raises(detector.DetectorError):
        detector.TemplateDetectorModel({"car": [np.zeros((2, 2, 3))]}, slope=0.0)
    with pytest.raises(detector.DetectorError):
        detector.TemplateDetectorModel({})


def test_template_model_roundtrip(tmp_path, car_model):
    p = tmp_path / "t.pjlm"
    car_model.save(p)
    back = detector.TemplateDetectorModel.load(p)
    assert back.slope == car_model.slope and back.offset == car_model.offset
    for a, b in zip(back.templates["car"], car_model.templates["car"]):
        assert np.array_equal(a, b)
    with pytest.raises(ContainerError):
        detector.LinearDetectorModel.load(p)


# -- linear detector ---------------------------------------------------------------


def test_thumbnail_block_means():
    img = np.zeros((32, 32, 3))
    img[:2, :2] = 1.0
    th = detector.thumbnail(img)
    assert th.shape == (256,)
    assert th[0] == pytest.approx(1.0) and th[1:].max() == 0.0


def test_two_point_separable():
    imgs = [np.zeros((32, 32, 3)), np.ones((32, 32, 3))]
    m = detector.train_linear_detector(imgs, [0, 1], epochs=200)
    preds = m.score(np.stack([detector.thumbnail(i) for i in imgs])) >= 0.5
    assert list(preds) == [False, True]


def test_single_class_dataset_rejected():
    with pytest.raises(detector.DegenerateDataset):
        detector.train_linear_detector([np.zeros((32, 32, 3))] * 3, [1, 1, 1])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0), st.floats(0.0, 0.1))
def test_training_loss_is_monotone(seed, lr, l2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 5))
    y = (x[:, 0] + 0.5 * rng.normal(size=40) > 0).astype(float)
    if y.min() == y.max():
        return
    _, _, hist = detector.fit_logistic(x, y, 60, lr, l2)
    assert np.all(np.diff(hist) <= 1e-9)


def test_fit_logistic_raw_space_matches_prediction():
    rng = np.random.default_rng(3)
    x = rng.normal(loc=5.0, scale=3.0, size=(80, 3))
    y = (x[:, 1] > 5.0).astype(float)
    w, b, _ = detector.fit_logistic(x, y, 300, 1.0)
    acc = np.mean((logistic(x @ w + b) >= 0.5) == (y == 1))
    assert acc >= 0.95


def test_callback_can_stop():
    x = np.array([[0.0], [1.0]])
    seen = []
    _, _, hist = detector.fit_logistic(x, np.array([0.0, 1.0]), 100, 1.0, callback=lambda e, *_: seen.append(e) or e == 5)
    assert len(hist) == 5 and seen == [1, 2, 3, 4, 5]


def test_linear_weights_length_checked():
    with pytest.raises(detector.DetectorError):
        detector.LinearDetectorModel("car", np.zeros(10), 0.0)


def test_untrained_model_rejected():
    with pytest.raises(detector.UntrainedModel):
        detector.LinearDetector([detector.LinearDetectorModel("car", np.zeros(256), 0.0)])


@pytest.mark.parametrize("label", ["car", "stop_sign"])
def test_linear_detector_held_out_accuracy(label):
    imgs, labels = detector.linear_training_set(label, 200, RngStream(0, 1))
    model = detector.train_linear_detector(imgs, labels, epochs=2000, label=label)
    test_imgs, test_labels = detector.linear_training_set(label, 200, RngStream(0, 2))
    scores = model.score(np.stack([detector.thumbnail(i) for i in test_imgs]))
    assert np.mean((scores >= 0.5) == (np.asarray(test_labels) == 1)) >= 0.95


def test_linear_model_roundtrip(tmp_path):
    imgs = [np.zeros((32, 32, 3)), np.ones((32, 32, 3))]
    m = detector.train_linear_detector(imgs, [0, 1], epochs=20, label="cup")
    p = tmp_path / "l.pjlm"
    m.save(p)
    back = detector.LinearDetectorModel.load(p)
    assert back.label == "cup" and back.trained and np.array_equal(back.weights, m.weights)
    assert back.loss_history == pytest.approx(m.loss_history)
