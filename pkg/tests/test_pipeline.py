import json

import numpy as np
import pytest

from pcapri import metrics, noise, pipeline
from pcapri.pipeline import PipelineError, PipelineSpec


@pytest.fixture(scope="module")
def noisy32(ph32):
    return noise.simulate_rician(ph32.data, 0.05 * ph32.intensity_peak, np.random.SeedSequence([0, 500]))


@pytest.mark.parametrize("tokens", ["", "gd", "pd", "dcx", "dc", "dgx"])
def test_invalid_specs(tokens):
    with pytest.raises(PipelineError):
        PipelineSpec(tokens)


def test_spec_requirements():
    with pytest.raises(PipelineError):
        PipelineSpec("d", noise_source="exact")
    with pytest.raises(PipelineError):
        PipelineSpec("c")
    with pytest.raises(PipelineError):
        PipelineSpec("d", noise_source="bogus")
    with pytest.raises(PipelineError):
        PipelineSpec("dp", stages=({}, {"tau_beta": 1.0}))
    PipelineSpec("cpd", surrogate_rmse=1.0)
    PipelineSpec("dgpd", noise_source="exact", sigma=2.0)


def test_parse_json():
    spec = PipelineSpec.parse(
        json.dumps(
            {
                "tokens": "dpd",
                "nlpca": {"tau_beta": 2.0, "T": 2.0},
                "stages": [{}, {"h_scale": 1.5}, {"step": 2}],
                "noise_source": "mad",
            }
        )
    )
    assert spec.tokens == "dpd" and spec.noise_source == "mad"
    assert spec.stage_params(0).tau_beta == 2.0
    assert spec.stage_params(1).h_scale == 1.5
    assert spec.stage_params(2).step == 2 and spec.stage_params(2).T == 2.0
    with pytest.raises(PipelineError):
        PipelineSpec.parse("{bad")
    with pytest.raises(PipelineError):
        PipelineSpec.parse('{"nlpca": {}}')


def test_report_has_one_entry_per_token(noisy32, ph32):
    out, rep = pipeline.run(noisy32, "dgpd", truth=ph32, background=ph32.data == 0)
    assert [s.token for s in rep.stages] == list("dgpd")
    assert [s.chain for s in rep.stages] == ["d", "dg", "dgp", "dgpd"]
    assert rep.stages[0].sigma is None and rep.stages[1].sigma > 0
    assert rep.stages[-1].psnr == pytest.approx(metrics.psnr(out, ph32.data))
    doc = json.loads(rep.to_json())
    assert len(doc["stages"]) == 4
    assert rep.to_csv().count("\n") == 5


def test_determinism_and_wrapper(noisy32, ph32):
    bg = ph32.data == 0
    a = pipeline.run(noisy32, "dgpd", background=bg)[0]
    b = pipeline.run(noisy32, "dgpd", background=bg)[0]
    c = pipeline.pca_pri_pcar(noisy32, background=bg)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_run_many_equals_run(noisy32, ph32):
    bg = ph32.data == 0
    many = pipeline.run_many(noisy32, ["d", "dg", "dgp"], background=bg)
    for chain in ("dg", "dgp"):
        np.testing.assert_array_equal(many[chain][0], pipeline.run(noisy32, chain, background=bg)[0])


def test_p_filters_original_noisy(noisy32, ph32):
    bg = ph32.data == 0
    res = pipeline.run_many(noisy32, ["dg", "dgp"], background=bg)
    sigma = noise.estimate_background_median(noisy32, bg)
    from pcapri import prinlm

    expect = prinlm.denoise(noisy32, res["dg"][0], sigma)
    np.testing.assert_array_equal(res["dgp"][0], expect)


def test_d_on_clean_is_near_identity(ph32):
    out = pipeline.run(ph32.data, "d")[0]
    assert metrics.rmse(out, ph32.data) < 0.005 * 255


def test_pd_tool(noisy32, ph32):
    s = 0.05 * ph32.intensity_peak
    out = pipeline.pd_tool(noisy32, ph32, s)
    assert metrics.psnr(out, ph32.data) > metrics.psnr(noisy32, ph32.data)
    clean = pipeline.pd_tool(ph32.data, ph32.data, 0.0)
    assert metrics.rmse(clean, ph32.data) < 0.005 * 255
    with pytest.raises(ValueError):
        pipeline.pd_tool(noisy32, ph32.data[:-1], s)


def test_surrogate(ph64):
    r = 0.015 * ph64.intensity_peak
    sur = pipeline.build_surrogate(ph64, r, np.random.SeedSequence([0, 0]))
    emp = np.sqrt(np.mean((sur - ph64.data) ** 2))
    assert emp == pytest.approx(r, rel=0.01)
    np.testing.assert_array_equal(pipeline.build_surrogate(ph64, 0.0, 1), ph64.data)
    r255 = 2.0
    sur = pipeline.build_surrogate(ph64, r255 * ph64.intensity_peak / 255, 3)
    assert metrics.psnr(sur, ph64.data) == pytest.approx(20 * np.log10(255 / r255), abs=0.1)


def test_c_stage_seeded(ph32):
    spec = PipelineSpec("cp", surrogate_rmse=3.0, seed=7)
    a = pipeline.run(ph32.data, spec, truth=ph32)[0]
    b = pipeline.run(ph32.data, spec, truth=ph32)[0]
    np.testing.assert_array_equal(a, b)
    with pytest.raises(PipelineError):
        pipeline.run(ph32.data, spec)


def test_noise_sources(noisy32, ph32):
    for src, kw in (("mad", {}), ("nlpca", {}), ("exact", {"sigma": 0.05 * ph32.intensity_peak})):
        out, rep = pipeline.run(noisy32, PipelineSpec("dgp", noise_source=src, **kw))
        assert np.all(np.isfinite(out))
        assert rep.stages[1].sigma > 0


def test_thread_invariance(noisy32, ph32):
    bg = ph32.data == 0
    a = pipeline.run(noisy32, "dgpd", background=bg, threads=1)[0]
    b = pipeline.run(noisy32, "dgpd", background=bg, threads=3)[0]
    np.testing.assert_array_equal(a, b)
