import os

from hypothesis import HealthCheck, settings

# Property tests run training-adjacent numerics; wall-clock deadlines only
# add flakiness on loaded machines.
settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))
