"""Mid-term stock forecasting with an LSTM, HMM regimes and a linear fusion stage,
plus long-only portfolio allocation on the forecasts."""
from .errors import *  # noqa: F401,F403
from .data import PriceTable, RollingWindowSet, load_price_table, make_windows  # noqa: F401
from .model import MidLSTM, WindowForecast  # noqa: F401

__version__ = "0.1.0"
