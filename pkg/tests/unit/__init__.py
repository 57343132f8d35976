# Unit testing directory
