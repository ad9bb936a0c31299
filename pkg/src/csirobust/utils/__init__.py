from .validation import (check_csi, check_csi_labels, check_labels, check_random_state,
                         derive_rng)

__all__ = ["check_csi", "check_csi_labels", "check_labels", "check_random_state",
           "derive_rng"]
