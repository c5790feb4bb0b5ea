"""Working-set convex optimization with capsule equivalence regions."""
