"""lfsynth: single-image 4D RGBD light-field synthesis and verification toolkit."""

__version__ = "0.1.0"

from .autodiff import Adam, Tensor, backward  # noqa: F401
from .lightfield import LightField, central_view, epi_slice, refocus  # noqa: F401
from .render import (  # noqa: F401
    LossBreakdown,
    depth_consistency_loss,
    render_lambertian,
    shear_resample,
    total_loss,
    tv_loss,
)
from .scenes import SceneSpec, generate_dataset, generate_scene  # noqa: F401
from .training import TrainConfig, train_step  # noqa: F401
