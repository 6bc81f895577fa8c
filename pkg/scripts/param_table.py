"""Parameter counts of the canonical and desk models for every attention mode."""
from muval.model import count_params, preset

for config in ("canonical", "desk"):
    off = count_params(preset(config, "off"))
    for mode in ("off", "single-view", "multi-view"):
        total = count_params(preset(config, mode))
        print(f"{config:<10} {mode:<12} {total:>12,d}  ({total / 1e6:.2f} M, attention {total - off:,d})")
