"""Shared fixtures: fast timing settings and device lifecycle management."""

import pytest

from replaycheck import PipelineSettings
from replaycheck.simdevices import default_profile, spawn_device

# Library defaults pace replays for real devices; loopback sims answer in
# microseconds, so the suite runs with tight timeouts throughout.
FAST = dict(
    per_flow_response_timeout_ms=120,
    inter_request_delay_ms=20,
    inter_flow_delay_ms=30,
    connect_timeout_ms=400,
)


@pytest.fixture
def fast_settings():
    return PipelineSettings(**FAST)


@pytest.fixture
def device_factory():
    """Spawns profiles with fast restart and guarantees shutdown."""
    spawned = []

    def spawn(behavior, **overrides):
        overrides.setdefault("post_restart_delay_s", 0.05)
        device = spawn_device(default_profile(behavior, **overrides))
        spawned.append(device)
        return device

    yield spawn
    for device in spawned:
        device.shutdown()
