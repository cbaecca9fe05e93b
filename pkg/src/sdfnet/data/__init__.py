from .augment import augment, hflip
from .images import load_images, normalize, read_image, save_dataset, to_chw
from .manifest import Manifest, SampleRecord, convert_hoss_tree, load_manifest
from .sampler import BatchPlan, check_batch, epoch_rng, plan_batches, qualifying_identities
from .synthetic import SynthConfig, generate_synthetic

__all__ = [
    "BatchPlan", "Manifest", "SampleRecord", "SynthConfig", "augment", "check_batch",
    "convert_hoss_tree", "epoch_rng", "generate_synthetic", "hflip", "load_images",
    "load_manifest", "normalize", "plan_batches", "qualifying_identities", "read_image",
    "save_dataset", "to_chw",
]
