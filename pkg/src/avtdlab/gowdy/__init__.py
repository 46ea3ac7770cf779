"""T^N-Gowdy evolution toward the singularity and its monotone quantities."""
from .state import (GowdyState, homogeneous, init_from_pq, extract_pq, bessel_polarized,
                    bessel_solution, random_data)
from .evolve import Trajectory, evolve, EvolutionError
from .analysis import (GowdyEnergies, energies, energy_identities, avtd_defect,
                       decay_integrand, decay_certificate, weak_form_check, bump,
                       bump_section, twist_density, twist_density_check, b_lipschitz)
from .snapshot import write_snapshot, read_snapshot

__all__ = [
    "GowdyState", "homogeneous", "init_from_pq", "extract_pq", "bessel_polarized",
    "bessel_solution", "random_data", "Trajectory", "evolve", "EvolutionError",
    "GowdyEnergies", "energies", "energy_identities", "avtd_defect", "decay_integrand",
    "decay_certificate", "weak_form_check", "bump", "bump_section", "twist_density",
    "twist_density_check", "b_lipschitz", "write_snapshot", "read_snapshot",
]
