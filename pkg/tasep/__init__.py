# Numerical core for speed-N^2 large deviations of TASEP / corner growth
