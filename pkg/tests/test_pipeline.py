import numpy as np
import pytest

from hybrid_aenr.features import ReorientLayout
from hybrid_aenr.kalman import KalmanConfig, kf_process
from hybrid_aenr.model import ModelConfig
from hybrid_aenr.pipeline import Pipeline, PipelineConfig, PipelineConfigError
from hybrid_aenr.stft import StftConfig

from conftest import make_scene


@pytest.fixture(scope="module")
def scene_dt():
    return make_scene(seconds=3.0, seed=21, scenario="dt", ser_db=0.0, snr_db=10.0)


def test_kf_only_stage_matches_kalman(scene_dt):
    res = Pipeline(PipelineConfig(stage="kf-only")).process(scene_dt.x, scene_dt.y)
    np.testing.assert_array_equal(res.output, kf_process(scene_dt.x, scene_dt.y)[1])
    np.testing.assert_array_equal(res.output, Pipeline(PipelineConfig(stage="kf-only"))
                                  .process_streaming(scene_dt.x, scene_dt.y))


def test_full_output_shapes(scene_dt):
    res = Pipeline(PipelineConfig(seed=2)).process(scene_dt.x, scene_dt.y)
    assert len(res.output) == len(scene_dt.x)
    assert res.mask_magnitude.shape[1] == 257 and res.delay_dist.shape[1] == 64
    assert np.all(np.isfinite(res.output))


def test_odd_length_streaming_matches_batch():
    out = make_scene(seconds=3.0, seed=5)
    x, y = out.x[:-77], out.y[:-77]
    for routing in ("z+e,y", "z,y+e"):
        cfg = PipelineConfig(model=ModelConfig(routing=routing), seed=1)
        pipe = Pipeline(cfg)
        np.testing.assert_array_equal(pipe.process(x, y).output, pipe.process_streaming(x, y))


def test_repeat_runs_identical(scene_dt):
    a = Pipeline(PipelineConfig(seed=9)).process(scene_dt.x, scene_dt.y).output
    b = Pipeline(PipelineConfig(seed=9)).process(scene_dt.x, scene_dt.y).output
    assert a.tobytes() == b.tobytes()


def test_config_mismatch_names_field():
    with pytest.raises(PipelineConfigError, match="block_size"):
        PipelineConfig(kalman=KalmanConfig(block_size=128)).validate()
    with pytest.raises(PipelineConfigError, match="num_bins"):
        PipelineConfig(model=ModelConfig(layout=ReorientLayout(num_bins=129))).validate()
    with pytest.raises(PipelineConfigError, match="stage"):
        PipelineConfig(stage="half").validate()
    with pytest.raises(PipelineConfigError):
        PipelineConfig(stft=StftConfig(fft_size=1024, window_len=1024, hop=512),
                       kalman=KalmanConfig(block_size=512)).validate()


def test_input_errors():
    pipe = Pipeline(PipelineConfig(stage="kf-only"))
    with pytest.raises(ValueError):
        pipe.process(np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        pipe.process(np.zeros(100), np.zeros(90))
