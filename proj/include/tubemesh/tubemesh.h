/* tubemesh C API — placeholder, filled in with the pipeline surface. */
#ifndef TUBEMESH_H
#define TUBEMESH_H
#endif
