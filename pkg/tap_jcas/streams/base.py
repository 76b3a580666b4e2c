"""Base stream for experiment tables.

Each stream computes one table from the tap config (scenario, checkpoints,
sweep settings) and emits it as a full-table sync.
"""

from typing import Any, Dict, Iterable, List, Mapping, Optional

from singer_sdk.streams import Stream

from tap_jcas.tables import clean
from tap_jcas.trainer import ExperimentConfig, JcasNetworks


class JcasStream(Stream):
    """Stream whose records are rows of a simulated experiment table."""

    replication_method = "FULL_TABLE"
    is_sorted = False

    _experiment: Optional[ExperimentConfig] = None

    @property
    def experiment(self) -> ExperimentConfig:
        """Return the experiment described by the tap config.

        Returns
        -------
        ExperimentConfig
            Parsed once per stream instance.

        """
        if self._experiment is None:
            self._experiment = ExperimentConfig.from_dict(dict(self.config))
        return self._experiment

    def networks(self) -> JcasNetworks:
        """Return the first configured checkpoint, or seeded initial networks."""
        return self.experiment.networks()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Compute the table."""
        raise NotImplementedError

    def get_records(self, context: Optional[Mapping[str, Any]]) -> Iterable[dict]:
        """Compute and emit the table rows.

        Args
        ----
        context : Optional[Mapping[str, Any]]
            Unused; experiment tables are not partitioned.

        Yields
        ------
        dict
            One table row, with non-finite values replaced by ``None``.

        """
        rows = clean(self.build_rows())
        self.logger.info(f"{self.name}: {len(rows)} rows (seed {self.experiment.seed})")
        yield from rows
