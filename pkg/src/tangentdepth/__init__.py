"""360-degree depth estimation from gnomonic tangent patches."""
