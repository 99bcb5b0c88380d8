"""AU branch and facial region schemes."""

from .branch import (AUBranch, AUTokenHead, AuPrediction, au_branch_param_count, crop_region,
                     img2seq, seq2img, symmetric_maxout)
from .schemes import SUPPORTED, Region, RegionScheme, build_scheme
