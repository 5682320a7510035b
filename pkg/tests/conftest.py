"""Shared fixtures: session-scoped synthetic basins and short-window episodes."""

from __future__ import annotations

from dataclasses import replace
from datetime import timedelta
from pathlib import Path

import pytest

from hydrocal.control import parse_control_file, write_control_file
from hydrocal.episode import Episode, EpisodeConfig
from hydrocal.synth import synth_basin


@pytest.fixture(scope="session", autouse=True)
def _warm_jit(tmp_path_factory):
    """Compile the simulation kernels once so timed tests measure physics."""
    bundle = synth_basin(tmp_path_factory.mktemp("warmup"), seed=999, n=4)
    from hydrocal.crest import Basin, ForcingSeries, simulate
    from hydrocal.control import parse_control_file

    cfg = parse_control_file(bundle.control_path)
    basin = Basin.from_config(cfg)
    forcing = ForcingSeries.from_csv(cfg.resolve(cfg.precip_csv), cfg.resolve(cfg.pet_csv))
    simulate(basin, forcing, bundle.true_params,
             window=(cfg.window_start, cfg.window_start + timedelta(hours=5)))


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    """The default 16x16 synthetic basin used across the suite."""
    return synth_basin(tmp_path_factory.mktemp("basin"), seed=42)


@pytest.fixture(scope="session")
def short_control(tmp_path_factory, bundle) -> Path:
    """A control file over the same basin with a 3-day window, for fast episodes."""
    cfg = parse_control_file(bundle.control_path)
    cfg = replace(
        cfg,
        dem=str(cfg.resolve(cfg.dem)),
        flowdir=str(cfg.resolve(cfg.flowdir)),
        mask=str(cfg.resolve(cfg.mask)),
        obs_csv=str(cfg.resolve(cfg.obs_csv)),
        precip_csv=str(cfg.resolve(cfg.precip_csv)),
        pet_csv=str(cfg.resolve(cfg.pet_csv)),
        window_end=cfg.window_start + timedelta(hours=71),
    )
    path = tmp_path_factory.mktemp("short") / "control.txt"
    write_control_file(cfg, path)
    return path


def make_episode(control_path, tmp_path, **overrides) -> Episode:
    cfg = EpisodeConfig(control_path=control_path, workdir=tmp_path / "episode-work",
                        **overrides)
    return Episode(cfg)
