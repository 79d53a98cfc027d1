"""Nonrecursive convolutional coding with a batched soft-decision Viterbi.

Generator polynomials use the customary octal notation with the most
significant bit acting on the current input bit, so the first output
stream of the (0o35, 0o23) code has impulse response 1,1,1,0,1.  Encoding
is zero-terminated: ``memory`` tail zeros drive the encoder back to state
zero, and the decoder exploits the known start and end states.

The Viterbi decoder is fully vectorized over a batch of codewords and over
the trellis states; only the time axis is a Python loop.  Soft inputs are
correlation metrics (positive values favour bit 0 / symbol +1) and any
positive per-codeword scaling leaves the decisions unchanged.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ParameterError

_NEG = -1e30


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


class ConvolutionalCode:
    """Rate-1/2 feedforward convolutional code with terminated blocks."""

    def __init__(self, generators=(0o35, 0o23)):
        self.generators = tuple(int(g) for g in generators)
        if len(self.generators) != 2:
            raise ParameterError("exactly two generator polynomials expected")
        self.constraint_length = max(g.bit_length() for g in self.generators)
        self.memory = self.constraint_length - 1
        self.n_states = 1 << self.memory
        self._build_tables()

    def _build_tables(self):
        m, n_states = self.memory, self.n_states
        self.next_state = np.empty((n_states, 2), dtype=np.int64)
        out_bits = np.empty((n_states, 2, 2), dtype=np.int8)
        for state in range(n_states):
            for bit in (0, 1):
                reg = (bit << m) | state
                for j, gen in enumerate(self.generators):
                    out_bits[state, bit, j] = _parity(gen & reg)
                self.next_state[state, bit] = reg >> 1
        self.out_signs = (1.0 - 2.0 * out_bits).astype(np.float64)
        # Each state has exactly two (state, bit) predecessors.
        self.pred_state = np.empty((n_states, 2), dtype=np.int64)
        self.pred_bit = np.empty((n_states, 2), dtype=np.int64)
        fill = np.zeros(n_states, dtype=np.int64)
        for state in range(n_states):
            for bit in (0, 1):
                nxt = self.next_state[state, bit]
                self.pred_state[nxt, fill[nxt]] = state
                self.pred_bit[nxt, fill[nxt]] = bit
                fill[nxt] += 1

    def coded_length(self, n_info: int) -> int:
        return 2 * (n_info + self.memory)

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        """Encode batched info bits (B, k) -> coded bits (B, 2*(k+memory))."""
        info_bits = np.atleast_2d(np.asarray(info_bits, dtype=np.int8))
        batch, k = info_bits.shape
        steps = k + self.memory
        padded = np.zeros((batch, steps), dtype=np.int8)
        padded[:, :k] = info_bits
        coded = np.zeros((batch, steps, 2), dtype=np.int8)
        for j, gen in enumerate(self.generators):
            acc = np.zeros((batch, steps), dtype=np.int8)
            for delay in range(self.constraint_length):
                if (gen >> (self.memory - delay)) & 1:
                    acc[:, delay:] ^= padded[:, :steps - delay]
            coded[:, :, j] = acc
        return coded.reshape(batch, 2 * steps)

    def viterbi_decode(self, soft: np.ndarray) -> np.ndarray:
        """Maximum-likelihood sequence decisions from soft inputs (B, 2T)."""
        soft = np.atleast_2d(np.asarray(soft, dtype=np.float64))
        batch, total = soft.shape
        if total % 2:
            raise ParameterError("soft input length must be even")
        steps = total // 2
        n_info = steps - self.memory
        if n_info < 1:
            raise ParameterError("codeword shorter than the encoder tail")

        sgn = self.out_signs.reshape(self.n_states * 2, 2)
        metrics = np.full((batch, self.n_states), _NEG)
        metrics[:, 0] = 0.0
        survivors = np.empty((steps, batch, self.n_states), dtype=np.int8)
        ps, pb = self.pred_state, self.pred_bit
        for t in range(steps):
            branch = (soft[:, 2 * t:2 * t + 2] @ sgn.T).reshape(
                batch, self.n_states, 2)
            arrive = metrics[:, ps] + branch[:, ps, pb]
            choice = np.argmax(arrive, axis=2)
            survivors[t] = choice
            metrics = np.take_along_axis(arrive, choice[:, :, None], axis=2)[:, :, 0]

        bits = np.empty((batch, steps), dtype=np.int8)
        state = np.zeros(batch, dtype=np.int64)   # terminated blocks end in 0
        rows = np.arange(batch)
        for t in range(steps - 1, -1, -1):
            pick = survivors[t][rows, state]
            bits[:, t] = pb[state, pick]
            state = ps[state, pick]
        return bits[:, :n_info]
