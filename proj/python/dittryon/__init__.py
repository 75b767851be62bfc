"""Python view of the desk-scale try-on toolkit."""

from ._dittryon import (  # noqa: F401
    ConfigError,
    DimensionError,
    Error,
    LatentCodec,
    ablation_variants,
    cmd_dataset,
    cmd_eval,
    cmd_sample,
    cmd_train,
    config_hash,
    frechet_distance,
    kernel_mmd,
    load_config,
    make_caption,
    ordering_holds,
    render_garment,
    ssim,
)
