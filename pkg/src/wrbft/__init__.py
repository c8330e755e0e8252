"""Two-layer consortium-chain consensus (weighted Raft + aggregated-signature PBFT) with a deterministic simulator."""

__version__ = "0.1.0"
