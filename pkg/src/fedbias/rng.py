"""Counter-based random streams for reproducible parallel simulation.

All randomness in the package flows from a single master seed through
Philox4x64 counter blocks, so that runs are deterministic functions of
(seed, configuration) and permuting the execution order of clients or
chains cannot change a single drawn value.

Two addressing layouts are used, separated by a key-domain tag so their
counter spaces never overlap:

* round streams -- one substream per (chain, round t, client c); the H
  local-step draws of that client's round are consumed in order from the
  substream.  Used by the single-trajectory engines.
* client streams -- one sequential substream per (chain, client c),
  consumed round by round.  Used by the vectorized multi-chain ensembles,
  where pre-drawing whole blocks of rounds keeps Monte Carlo cheap.

Counter words are laid out little-endian with the free-running word lowest
(position 0), so a substream can draw up to 2^64 values before touching
the path-identifying words.
"""

from __future__ import annotations

import numpy as np

_DOMAIN_ROUND = np.uint64(0x9E3779B97F4A7C15)
_DOMAIN_CLIENT = np.uint64(0xC2B2AE3D27D4EB4F)


class RandomStream:
    """Hierarchy of independent Philox substreams under one master seed.

    The chain id distinguishes Monte Carlo replicas, coupled-pair members
    sharing noise simply reuse the same chain id, and the two runs of a
    Richardson-Romberg pair use distinct chain ids.
    """

    def __init__(self, master_seed: int, chain: int = 0):
        if not 0 <= int(chain) < 2**63:
            raise ValueError("chain id must be a nonnegative 63-bit integer")
        self.master_seed = int(master_seed)
        self.chain = int(chain)
        self._key = np.random.SeedSequence(self.master_seed).generate_state(2, dtype=np.uint64)

    def with_chain(self, chain: int) -> "RandomStream":
        return RandomStream(self.master_seed, chain)

    def _make(self, domain: np.uint64, words) -> np.random.Generator:
        key = self._key.copy()
        key[1] ^= domain
        counter = np.zeros(4, dtype=np.uint64)
        counter[1:] = words
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def round_rng(self, t: int, c: int) -> np.random.Generator:
        """Generator for the path (chain, round t, client c)."""
        if t < 0 or c < 0:
            raise ValueError("round and client indices must be nonnegative")
        return self._make(_DOMAIN_ROUND, (np.uint64(c), np.uint64(t), np.uint64(self.chain)))

    def client_rng(self, c: int) -> np.random.Generator:
        """Sequential generator owned by (chain, client c)."""
        if c < 0:
            raise ValueError("client index must be nonnegative")
        return self._make(_DOMAIN_CLIENT, (np.uint64(0), np.uint64(c), np.uint64(self.chain)))
