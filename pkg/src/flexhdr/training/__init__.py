from .losses import (
    FeatureExtractor,
    LossReport,
    VGG_WEIGHT,
    default_extractor,
    loss_perceptual,
    loss_photometric,
    loss_tonemapped,
    total_loss,
)
from .scenes import (
    Scene,
    SceneError,
    Transform,
    apply_transform,
    augment,
    find_scene_dirs,
    ingest_scene_dir,
    make_synthetic_scene,
    write_scene_dir,
)
from .loop import (
    FramePolicy,
    NumericalAbort,
    TrainConfig,
    evaluate,
    evaluate_baseline,
    mean_psnr,
    sample_batch,
    subset,
    synthetic_pool,
    train,
    train_step,
)
