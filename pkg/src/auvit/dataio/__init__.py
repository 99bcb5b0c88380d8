"""Manifests, AU vocabulary, augmentation and mixed-batch sampling."""

from .augment import AugmentPolicy, augment, gaussian_blur, grayscale, hflip
from .imageio import read_feature_map, read_image, write_feature_map, write_image, write_pgm
from .loss import bce_mask_loss
from .manifest import DatasetManifest, SampleRecord, load_manifest, write_manifest
from .sampler import MixedBatch, MixedBatchSampler, balanced_order, sample_mixed_batch, split_counts
from .vocab import COMMON_AUS, DEFAULT_AUS, AuVocabulary, normalize_code
