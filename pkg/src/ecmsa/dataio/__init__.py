from .augment import AugmentConfig, augment, hflip, sample_rng
from .manifest import SampleRecord, load_manifest, scan_manifest, split_records, write_manifest
from .raster import decode, encode, read_raster, write_raster
from .stats import CaptionStats, caption_stats
from .synth import PALETTE, Scene, render_scene, synth_crossmodal, write_synth_dataset

__all__ = [
    "AugmentConfig", "augment", "hflip", "sample_rng",
    "SampleRecord", "load_manifest", "scan_manifest", "split_records", "write_manifest",
    "decode", "encode", "read_raster", "write_raster",
    "CaptionStats", "caption_stats",
    "PALETTE", "Scene", "render_scene", "synth_crossmodal", "write_synth_dataset",
]
