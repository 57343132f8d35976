# Functional testing directory
