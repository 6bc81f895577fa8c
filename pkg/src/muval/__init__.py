"""Multi-view slice attention over a residual 3D CNN, with a small numpy autodiff engine."""
from muval.errors import ConfigError, ContractError, DimensionError, FormatError, MuvalError, NumericError, ParseError
from muval.model import ModelConfig, count_params, init_params, preset
from muval.train import TrainConfig, train
from muval.volume_io import BlobSpec, Volume, generate_synthetic

__version__ = "0.1.0"
