"""Physical constants used throughout the package.

Unit conventions: frequencies in MHz, times in microseconds, fields in mT,
microwave powers in mW, phases in radians.
"""
from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    planck_h: float = 6.62607015e-34  # J s, exact
    bohr_magneton_over_h: float = 13.9962449  # GHz/T == MHz/mT

    @property
    def mu_b_mhz_per_mt(self) -> float:
        return self.bohr_magneton_over_h


CONSTANTS = PhysicalConstants()
MU_B_MHZ_PER_MT = CONSTANTS.bohr_magneton_over_h
