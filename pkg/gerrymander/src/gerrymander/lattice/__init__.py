"""Transfer-matrix enumeration, assembly and exhaustive checks."""
