from corgipile.dataset.format import DatasetFile
from corgipile.shuffle.baselines import (
    ShuffledCopy,
    block_only_stream,
    block_permutation,
    epoch_shuffle_stream,
    mrs_stream,
    no_shuffle_stream,
    shuffle_once_stream,
    sliding_window_stream,
)
from corgipile.shuffle.config import STRATEGIES, ShuffleConfig, buffer_blocks
from corgipile.shuffle.corgipile import corgipile_plan, corgipile_psi, corgipile_stream
from corgipile.shuffle.order import (
    OrderProfile,
    analyze_order,
    binomial_mad_reference,
    hypergeom_mad_reference,
    profile_sequence,
)
from corgipile.shuffle.stream import BlockPool, TupleStream


class StreamFactory:
    """Builds the epoch-``s`` stream for one dataset and config.

    Holds the Shuffle Once copy across epochs so it is produced only once.
    """

    def __init__(self, ds: DatasetFile, config: ShuffleConfig):
        config.validate()
        self.ds = ds
        self.config = config
        self.copy: ShuffledCopy | None = None

    def __call__(self, epoch: int) -> TupleStream:
        c, ds = self.config, self.ds
        if c.strategy == "no_shuffle":
            return no_shuffle_stream(ds, epoch)
        if c.strategy == "shuffle_once":
            if self.copy is None:
                self.copy = ShuffledCopy(ds, c.seed, c.shuffled_copy)
            return shuffle_once_stream(self.copy, epoch)
        if c.strategy == "epoch_shuffle":
            return epoch_shuffle_stream(ds, c.seed, epoch, c.index_budget)
        if c.strategy == "sliding_window":
            return sliding_window_stream(ds, c.buffer_fraction, c.seed, epoch)
        if c.strategy == "mrs":
            return mrs_stream(ds, c.buffer_fraction, c.seed, epoch, c.loop_ratio)
        if c.strategy == "block_only":
            return block_only_stream(ds, c.seed, epoch)
        return corgipile_stream(
            ds, c.buffer_blocks(ds.N), c.seed, epoch, mode=c.corgipile_epoch, double_buffer=c.double_buffer
        )

    def close(self) -> None:
        if self.copy is not None and self.copy._ds is not None:
            self.copy._ds.close()
            self.copy._ds = None


def make_stream(ds: DatasetFile, config: ShuffleConfig, epoch: int = 0) -> TupleStream:
    """One-off stream for ``epoch``; use :class:`StreamFactory` across epochs."""
    return StreamFactory(ds, config)(epoch)


__all__ = [
    "STRATEGIES", "ShuffleConfig", "buffer_blocks", "TupleStream", "BlockPool", "StreamFactory", "make_stream",
    "ShuffledCopy", "no_shuffle_stream", "shuffle_once_stream", "epoch_shuffle_stream", "sliding_window_stream",
    "mrs_stream", "block_only_stream", "block_permutation", "corgipile_plan", "corgipile_psi", "corgipile_stream",
    "OrderProfile", "analyze_order", "profile_sequence", "binomial_mad_reference", "hypergeom_mad_reference",
]
