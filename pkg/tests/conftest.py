import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from invarsim.render import RenderConfig, render_frame, render_ground_truth
from invarsim.scenegen import SceneConfig, sample_scene, validation_scene_config


@pytest.fixture(scope="session")
def validation_scene():
    cfg = SceneConfig.from_dict(validation_scene_config())
    return sample_scene(cfg, seed=7)


@pytest.fixture(scope="session")
def small_render_cfg():
    return RenderConfig(width=64, height=48, samples_per_pixel=8,
                        max_bounces=1, rng_seed=11)


@pytest.fixture(scope="session")
def validation_gt(validation_scene, small_render_cfg):
    return render_ground_truth(validation_scene, small_render_cfg)


@pytest.fixture(scope="session")
def validation_hdr(validation_scene, small_render_cfg):
    return render_frame(validation_scene, small_render_cfg)
