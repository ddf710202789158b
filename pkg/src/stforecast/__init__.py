"""Spatio-temporal event forecasting with Hawkes-network graphs and graph-structured RNNs.

Pipeline: events -> sparse Hawkes network (EM) -> weighted graph -> recurrent
forecasters trained on diurnally cumulated, super-resolved counts.
"""

__version__ = "0.1.0"

from .events import DataError, Event, EventSequence, NodeSeries, SeriesState  # noqa: E402
from .graph import WeightedGraph  # noqa: E402
from .hawkes import HawkesModel, simulate, spectral_radius  # noqa: E402

__all__ = ["DataError", "Event", "EventSequence", "NodeSeries", "SeriesState", "WeightedGraph",
           "HawkesModel", "simulate", "spectral_radius", "__version__"]
